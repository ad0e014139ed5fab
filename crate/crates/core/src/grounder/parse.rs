//! Response parsers for the two prompt protocols.
//!
//! Both protocols ask for pixel coordinates in the crop that was sent, so
//! both parsers normalize by the crop size. Values in `[0, 1]` are still
//! read as pixels.

use std::sync::LazyLock;

use regex::Regex;
use serde_json::Value;

use super::GroundingOutcome;
use crate::NormPoint;

static BRACKET_GROUP: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\[([^\[\]]*)\]").unwrap());
static TOOL_CALL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?s)<tool_call>(.*?)(?:</tool_call>|$)").unwrap());

fn failure(text: &str) -> GroundingOutcome {
    GroundingOutcome::ParseFailure {
        raw: text.to_string(),
    }
}

fn normalized(x: f64, y: f64, crop_w: u32, crop_h: u32) -> GroundingOutcome {
    let (nx, ny) = (x / crop_w.max(1) as f64, y / crop_h.max(1) as f64);
    let point = NormPoint::clamped(nx, ny);
    GroundingOutcome::Point {
        point,
        clamped: point.x != nx || point.y != ny,
    }
}

/// Parses `[x1, y1, x2, y2]` (crop pixels) and returns the box center.
///
/// Only the first bracket group is considered; it must hold exactly four
/// finite numbers.
pub fn parse_bbox_response(text: &str, crop_w: u32, crop_h: u32) -> GroundingOutcome {
    let Some(group) = BRACKET_GROUP.captures(text).and_then(|c| c.get(1)) else {
        return failure(text);
    };
    let nums: Option<Vec<f64>> = group
        .as_str()
        .split([',', ' ', '\t', '\n'])
        .filter(|tok| !tok.is_empty())
        .map(|tok| tok.parse::<f64>().ok().filter(|v| v.is_finite()))
        .collect();
    match nums.as_deref() {
        Some([x1, y1, x2, y2]) => normalized((x1 + x2) / 2.0, (y1 + y2) / 2.0, crop_w, crop_h),
        _ => failure(text),
    }
}

/// Parses the first `<tool_call>{...}</tool_call>` block and reads
/// `arguments.coordinate = [x, y]` in crop pixels.
pub fn parse_toolcall_response(text: &str, crop_w: u32, crop_h: u32) -> GroundingOutcome {
    let Some(body) = TOOL_CALL.captures(text).and_then(|c| c.get(1)) else {
        return failure(text);
    };
    let Ok(call) = serde_json::from_str::<Value>(body.as_str().trim()) else {
        return failure(text);
    };
    let arguments = match call.get("arguments") {
        // Some servers send arguments as a JSON-encoded string.
        Some(Value::String(s)) => match serde_json::from_str::<Value>(s) {
            Ok(v) => v,
            Err(_) => return failure(text),
        },
        Some(v) => v.clone(),
        None => return failure(text),
    };
    let coord = arguments
        .get("coordinate")
        .and_then(Value::as_array)
        .and_then(|arr| match arr.as_slice() {
            [x, y] => Some((x.as_f64()?, y.as_f64()?)),
            _ => None,
        });
    match coord {
        Some((x, y)) if x.is_finite() && y.is_finite() => normalized(x, y, crop_w, crop_h),
        _ => failure(text),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(o: &GroundingOutcome) -> (f64, f64) {
        let p = o.as_point().expect("expected a point");
        (p.x, p.y)
    }

    #[test]
    fn bbox_full_crop() {
        assert_eq!(pt(&parse_bbox_response("[0, 0, 400, 400]", 400, 400)), (0.5, 0.5));
    }

    #[test]
    fn bbox_embedded_in_prose() {
        let o = parse_bbox_response("The box is [10, 20, 30, 40].", 100, 100);
        assert_eq!(pt(&o), (0.2, 0.3));
    }

    #[test]
    fn bbox_center_of_offset_box() {
        let o = parse_bbox_response("[100, 50, 200, 150]", 400, 400);
        assert_eq!(pt(&o), (0.375, 0.25));
    }

    #[test]
    fn bbox_failures() {
        for text in ["click near the icon", "[1, 2, 3]", "[1, 2, 3, 4, 5]", "[x1, y1, x2, y2]", ""] {
            assert!(
                matches!(parse_bbox_response(text, 100, 100), GroundingOutcome::ParseFailure { .. }),
                "{text}"
            );
        }
    }

    #[test]
    fn bbox_out_of_range_is_clamped_and_flagged() {
        match parse_bbox_response("[150, 0, 250, 10]", 100, 100) {
            GroundingOutcome::Point { point, clamped } => {
                assert_eq!((point.x, point.y), (1.0, 0.05));
                assert!(clamped);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn toolcall_documented_example() {
        let text = r#"<tool_call>
{"name": "computer_use", "arguments": {"action": "left_click", "coordinate": [500, 300]}}
</tool_call>"#;
        assert_eq!(pt(&parse_toolcall_response(text, 1000, 600)), (0.5, 0.5));
    }

    #[test]
    fn toolcall_origin_and_missing_field() {
        let ok = r#"<tool_call>{"name":"computer_use","arguments":{"action":"left_click","coordinate":[0,0]}}</tool_call>"#;
        assert_eq!(pt(&parse_toolcall_response(ok, 37, 91)), (0.0, 0.0));
        let missing = r#"<tool_call>{"name":"computer_use","arguments":{"action":"left_click"}}</tool_call>"#;
        assert!(matches!(
            parse_toolcall_response(missing, 100, 100),
            GroundingOutcome::ParseFailure { .. }
        ));
    }

    #[test]
    fn parsers_are_pure() {
        let text = "[3, 4, 5, 6] and [7, 8, 9, 10]";
        assert_eq!(parse_bbox_response(text, 50, 50), parse_bbox_response(text, 50, 50));
    }
}
