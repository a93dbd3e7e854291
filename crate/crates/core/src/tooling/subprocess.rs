use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use super::{Invocation, ToolAdapter, ToolAdapterDescriptor, ToolError, ToolKind};

/// Marker line preceding each property body in a formal or coverage bundle.
pub const PROPERTY_MARKER: &str = "// tapeloop-property";

/// Runs an external tool from a command template. Success is exit code 0
/// plus a report file; stdout and stderr are never parsed.
#[derive(Debug, Clone)]
pub struct SubprocessAdapter {
    desc: ToolAdapterDescriptor,
    workdir_root: PathBuf,
}

impl SubprocessAdapter {
    pub fn new(desc: ToolAdapterDescriptor, workdir_root: PathBuf) -> Result<Self, ToolError> {
        desc.validate()?;
        Ok(Self { desc, workdir_root })
    }

    pub fn descriptor(&self) -> &ToolAdapterDescriptor {
        &self.desc
    }

    fn write_input(&self, inv: &Invocation, workdir: &Path) -> Result<PathBuf, ToolError> {
        let io = |e: std::io::Error| ToolError::Io(e.to_string());
        let (name, text) = match inv.kind {
            ToolKind::Lint => {
                let artifact = inv
                    .artifacts
                    .first()
                    .ok_or_else(|| ToolError::Io("lint invocation without an artifact".into()))?;
                (format!("{}.sv", artifact.module_name), artifact.source_text.clone())
            }
            ToolKind::Formal | ToolKind::Coverage => {
                let mut text = String::new();
                for artifact in &inv.artifacts {
                    text.push_str(&artifact.source_text);
                    text.push('\n');
                }
                for p in &inv.properties {
                    text.push_str(&format!(
                        "{PROPERTY_MARKER} {}\n{}\n",
                        p.property.property_id, p.property.body_text
                    ));
                }
                ("bundle.sv".to_string(), text)
            }
        };
        let path = workdir.join(name);
        fs::write(&path, text).map_err(io)?;
        Ok(path)
    }
}

fn substitute(arg: &str, input: &Path, report: &Path, workdir: &Path) -> String {
    arg.replace("{input}", &input.to_string_lossy())
        .replace("{report}", &report.to_string_lossy())
        .replace("{workdir}", &workdir.to_string_lossy())
}

impl ToolAdapter for SubprocessAdapter {
    fn kind(&self) -> ToolKind {
        self.desc.kind
    }

    fn invoke(&self, inv: &Invocation) -> Result<String, ToolError> {
        if inv.kind != self.desc.kind {
            return Err(ToolError::WrongKind {
                expected: inv.kind,
                got: self.desc.kind,
            });
        }
        let io = |e: std::io::Error| ToolError::Io(e.to_string());
        let workdir = self
            .workdir_root
            .join(format!("{}-{}-{}", inv.design_id, inv.kind, inv.index));
        fs::create_dir_all(&workdir).map_err(io)?;
        let input = self.write_input(inv, &workdir)?;
        let report = workdir.join("report.txt");
        let _ = fs::remove_file(&report);

        let argv: Vec<String> = self
            .desc
            .command
            .iter()
            .map(|a| substitute(a, &input, &report, &workdir))
            .collect();
        let crash = |code: Option<i32>, detail: String| ToolError::ToolCrash {
            adapter: self.desc.adapter_id.clone(),
            code,
            detail,
        };
        let output = Command::new(&argv[0])
            .args(&argv[1..])
            .current_dir(&workdir)
            .stdin(Stdio::null())
            .output()
            .map_err(|e| crash(None, format!("spawn `{}`: {e}", argv[0])))?;
        if !output.status.success() {
            let stderr = String::from_utf8_lossy(&output.stderr);
            return Err(crash(output.status.code(), stderr.trim().to_string()));
        }
        fs::read_to_string(&report).map_err(|e| crash(Some(0), format!("no report file: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::TemperatureBucket;
    use crate::model::RtlArtifact;

    fn adapter(dir: &Path, command: &[&str]) -> SubprocessAdapter {
        let desc = ToolAdapterDescriptor {
            adapter_id: "sh-lint".into(),
            kind: ToolKind::Lint,
            command: command.iter().map(|s| s.to_string()).collect(),
            report_dialect: "lint-v1".into(),
        };
        SubprocessAdapter::new(desc, dir.to_path_buf()).unwrap()
    }

    fn lint_invocation() -> Invocation {
        Invocation {
            kind: ToolKind::Lint,
            design_id: "crc".into(),
            bucket: TemperatureBucket::Low,
            index: 1,
            artifacts: vec![RtlArtifact::first("crc_core", "module crc_core; endmodule")],
            properties: vec![],
        }
    }

    #[test]
    fn report_file_is_the_only_output() {
        let dir = tempfile::tempdir().unwrap();
        let a = adapter(
            dir.path(),
            &[
                "sh",
                "-c",
                "echo ignored; echo \"ERROR [PH-1] crc_core:1 stub in $1\" > \"$2\"",
                "sh",
                "{input}",
                "{report}",
            ],
        );
        let report = a.invoke(&lint_invocation()).unwrap();
        assert!(report.starts_with("ERROR [PH-1] crc_core:1 stub in "));
        assert!(report.trim_end().ends_with("crc_core.sv"));
    }

    #[test]
    fn nonzero_exit_is_a_crash() {
        let dir = tempfile::tempdir().unwrap();
        let a = adapter(dir.path(), &["sh", "-c", "touch \"$1\"; exit 3", "sh", "{report}"]);
        assert!(matches!(
            a.invoke(&lint_invocation()),
            Err(ToolError::ToolCrash { code: Some(3), .. })
        ));
    }

    #[test]
    fn missing_report_is_a_crash() {
        let dir = tempfile::tempdir().unwrap();
        let a = adapter(dir.path(), &["true", "{report}"]);
        assert!(matches!(
            a.invoke(&lint_invocation()),
            Err(ToolError::ToolCrash { code: Some(0), .. })
        ));
    }

    #[test]
    fn placeholders_are_not_shell_interpreted() {
        let dir = tempfile::tempdir().unwrap();
        // printf receives the literal path; a shell would have expanded `$HOME`.
        let a = adapter(
            dir.path(),
            &[
                "sh",
                "-c",
                "printf '%s' \"$1\" > \"$2\"",
                "sh",
                "$HOME-{workdir}",
                "{report}",
            ],
        );
        let report = a.invoke(&lint_invocation()).unwrap();
        assert!(report.starts_with("$HOME-"));
    }
}
