use serde::Deserialize;
use zoomground::grounder::{parse_bbox_response, parse_toolcall_response};
use zoomground::GroundingOutcome;

#[derive(Deserialize)]
struct Expected {
    x: f64,
    y: f64,
    clamped: bool,
}

#[derive(Deserialize)]
struct Golden {
    protocol: String,
    text: String,
    crop: [u32; 2],
    expect: Option<Expected>,
}

fn goldens() -> Vec<Golden> {
    serde_json::from_str(include_str!("fixtures/parser_goldens.json")).unwrap()
}

fn check(protocol: &str, parse: fn(&str, u32, u32) -> GroundingOutcome) {
    let cases: Vec<Golden> = goldens().into_iter().filter(|g| g.protocol == protocol).collect();
    assert!(cases.len() >= 20, "{protocol}: only {} goldens", cases.len());
    assert!(cases.iter().any(|g| g.expect.is_none()), "{protocol}: no malformed cases");
    for g in cases {
        let got = parse(&g.text, g.crop[0], g.crop[1]);
        match (&g.expect, &got) {
            (Some(e), GroundingOutcome::Point { point, clamped }) => {
                assert!(
                    (point.x - e.x).abs() < 1e-9 && (point.y - e.y).abs() < 1e-9 && *clamped == e.clamped,
                    "{:?}: got {got:?}",
                    g.text
                );
            }
            (None, GroundingOutcome::ParseFailure { raw }) => assert_eq!(raw, &g.text),
            _ => panic!("{:?}: got {got:?}", g.text),
        }
    }
}

#[test]
fn bbox_goldens() {
    check("bbox", parse_bbox_response);
}

#[test]
fn toolcall_goldens() {
    check("toolcall", parse_toolcall_response);
}

#[test]
fn goldens_include_the_reference_tool_call() {
    assert!(goldens()
        .iter()
        .any(|g| g.protocol == "toolcall" && g.text.contains("[500, 300]") && g.crop == [1000, 600]));
}
