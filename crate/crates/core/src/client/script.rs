//! Timestamped learner scripts.
//!
//! ```text
//! # comment
//! @0    dial 6
//! @250  power 0
//! @500  chat resistor looks fine
//! @900  serial frames.bin
//! ```
//!
//! Times are milliseconds from script start. `dial` accepts an ordinal or a
//! range name such as `ohm-2k`.

use std::path::{Path, PathBuf};
use std::time::Duration;

use thiserror::Error;
use tokio::time::Instant;

use crate::instrument::DialPosition;
use crate::protocol::ControlParameter;

use super::{ClientError, Session};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScriptCommand {
    Dial(u8),
    Power(bool),
    Chat(String),
    Serial(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptLine {
    pub at: Duration,
    pub command: ScriptCommand,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("script line {line}: {reason}")]
pub struct ScriptError {
    pub line: usize,
    pub reason: String,
}

pub fn parse_script(text: &str) -> Result<Vec<ScriptLine>, ScriptError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |reason: String| ScriptError {
            line: i + 1,
            reason,
        };
        let rest = line
            .strip_prefix('@')
            .ok_or_else(|| err("expected @<ms>".into()))?;
        let (ms, rest) = rest.split_once(char::is_whitespace).unwrap_or((rest, ""));
        let ms: u64 = ms.parse().map_err(|_| err(format!("bad time {ms:?}")))?;
        let rest = rest.trim_start();
        let (verb, arg) = rest.split_once(char::is_whitespace).unwrap_or((rest, ""));
        let command = match verb {
            "dial" => {
                let arg = arg.trim();
                let pos = arg
                    .parse::<u8>()
                    .ok()
                    .and_then(DialPosition::from_ordinal)
                    .or_else(|| DialPosition::from_name(arg))
                    .ok_or_else(|| err(format!("unknown dial position {arg:?}")))?;
                ScriptCommand::Dial(pos.ordinal())
            }
            "power" => match arg.trim() {
                "1" | "on" => ScriptCommand::Power(true),
                "0" | "off" => ScriptCommand::Power(false),
                other => return Err(err(format!("power takes 0 or 1, got {other:?}"))),
            },
            "chat" => ScriptCommand::Chat(arg.to_string()),
            "serial" if !arg.trim().is_empty() => ScriptCommand::Serial(arg.trim().into()),
            "serial" => return Err(err("serial needs a frame file".into())),
            other => return Err(err(format!("unknown command {other:?}"))),
        };
        out.push(ScriptLine {
            at: Duration::from_millis(ms),
            command,
        });
    }
    Ok(out)
}

/// Run `lines` against `session`, in file order, each no earlier than its
/// timestamp. Relative serial paths resolve against `base_dir`.
pub async fn run_script(
    session: &mut Session,
    lines: &[ScriptLine],
    base_dir: &Path,
) -> Result<(), ClientError> {
    let start = Instant::now();
    for line in lines {
        tokio::time::sleep_until(start + line.at).await;
        match &line.command {
            ScriptCommand::Dial(o) => session.send_control(ControlParameter::set_dial(*o)).await?,
            ScriptCommand::Power(on) => {
                session
                    .send_control(ControlParameter::set_power(*on))
                    .await?
            }
            ScriptCommand::Chat(text) => session.send_chat(text.clone()).await?,
            ScriptCommand::Serial(path) => {
                let path = base_dir.join(path);
                let bytes = tokio::fs::read(&path)
                    .await
                    .map_err(|e| ClientError::Transport(e.into()))?;
                session.attach_serial(&bytes).await?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_command() {
        let text = "# warm up\n@0 dial 6\n@10 dial ohm-200\n@20 power 0\n@30 chat hello  there\n\n@40 serial f.bin\n";
        let lines = parse_script(text).unwrap();
        let cmds: Vec<_> = lines.iter().map(|l| l.command.clone()).collect();
        assert_eq!(
            cmds,
            vec![
                ScriptCommand::Dial(6),
                ScriptCommand::Dial(5),
                ScriptCommand::Power(false),
                ScriptCommand::Chat("hello  there".into()),
                ScriptCommand::Serial("f.bin".into()),
            ]
        );
        assert_eq!(lines[3].at, Duration::from_millis(30));
    }

    #[test]
    fn empty_chat_is_allowed() {
        let lines = parse_script("@5 chat").unwrap();
        assert_eq!(lines[0].command, ScriptCommand::Chat(String::new()));
    }

    #[test]
    fn reports_line_numbers() {
        let e = parse_script("@0 dial 1\n@x dial 2").unwrap_err();
        assert_eq!(e.line, 2);
        assert_eq!(parse_script("@0 dial 99").unwrap_err().line, 1);
        assert!(parse_script("dial 1").is_err());
        assert!(parse_script("@0 power 2").is_err());
        assert!(parse_script("@0 jump").is_err());
    }
}
