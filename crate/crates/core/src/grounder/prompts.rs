//! Prompt templates for the two endpoint protocols.
//!
//! Templates use `{instruction}`, `{tools}`, `{width}` and `{height}`
//! placeholders. The defaults are compiled in; a directory holding files of
//! the same names overrides them.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

const BBOX: &str = include_str!("../../prompts/bbox.txt");
const TOOLCALL_SYSTEM: &str = include_str!("../../prompts/toolcall_system.txt");
const TOOLCALL_USER: &str = include_str!("../../prompts/toolcall_user.txt");
const TOOL_SPEC: &str = include_str!("../../prompts/computer_use_tool.json");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub bbox: String,
    pub toolcall_system: String,
    pub toolcall_user: String,
    pub tool_spec: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            bbox: BBOX.trim_end().to_string(),
            toolcall_system: TOOLCALL_SYSTEM.trim_end().to_string(),
            toolcall_user: TOOLCALL_USER.trim_end().to_string(),
            tool_spec: TOOL_SPEC.trim().to_string(),
        }
    }
}

impl PromptTemplates {
    /// Loads overrides from `dir`; files that are absent keep the default.
    pub fn from_dir(dir: &Path) -> std::io::Result<Self> {
        let mut t = Self::default();
        let slots: [(&str, &mut String); 4] = [
            ("bbox.txt", &mut t.bbox),
            ("toolcall_system.txt", &mut t.toolcall_system),
            ("toolcall_user.txt", &mut t.toolcall_user),
            ("computer_use_tool.json", &mut t.tool_spec),
        ];
        for (name, slot) in slots {
            let path = dir.join(name);
            if path.exists() {
                *slot = std::fs::read_to_string(path)?.trim_end().to_string();
            }
        }
        Ok(t)
    }

    pub fn render_bbox(&self, instruction: &str) -> String {
        self.bbox.replace("{instruction}", instruction)
    }

    pub fn render_toolcall_system(&self, width: u32, height: u32) -> String {
        let tools = self.render_tool_spec(width, height);
        self.toolcall_system.replace("{tools}", &tools)
    }

    pub fn render_toolcall_user(&self, instruction: &str) -> String {
        self.toolcall_user.replace("{instruction}", instruction)
    }

    pub fn render_tool_spec(&self, width: u32, height: u32) -> String {
        self.tool_spec
            .replace("{width}", &width.to_string())
            .replace("{height}", &height.to_string())
    }

    /// SHA-256 of each template, for run manifests.
    pub fn hashes(&self) -> BTreeMap<String, String> {
        [
            ("bbox", &self.bbox),
            ("toolcall_system", &self.toolcall_system),
            ("toolcall_user", &self.toolcall_user),
            ("tool_spec", &self.tool_spec),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), hex::encode(Sha256::digest(v.as_bytes()))))
        .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bbox_template_renders_instruction() {
        let t = PromptTemplates::default();
        let s = t.render_bbox("open the File menu");
        assert!(s.starts_with("Outline the position corresponding to the instruction: open the File menu."));
        assert!(s.ends_with("[x1, y1, x2, y2]."));
    }

    #[test]
    fn tool_spec_is_valid_json_after_render() {
        let t = PromptTemplates::default();
        let spec: serde_json::Value = serde_json::from_str(&t.render_tool_spec(800, 600)).unwrap();
        assert_eq!(spec["function"]["name"], "computer_use");
        assert!(t.render_toolcall_system(800, 600).contains("800x600"));
    }

    #[test]
    fn overrides_from_dir() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("bbox.txt"), "Find {instruction}\n").unwrap();
        let t = PromptTemplates::from_dir(dir.path()).unwrap();
        assert_eq!(t.render_bbox("x"), "Find x");
        assert_eq!(t.toolcall_user, PromptTemplates::default().toolcall_user);
        assert_ne!(t.hashes()["bbox"], PromptTemplates::default().hashes()["bbox"]);
    }
}
