//! Line-delimited corpus records:
//! `dialog_id,turn,role,state_vector,action_multihot,terminal_bit`, where the
//! two vector fields are quoted comma-separated numbers.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::acts::Role;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusRecord {
    pub dialog_id: usize,
    pub turn: usize,
    pub role: Role,
    pub state: Vec<f64>,
    /// Act multi-hot, without the terminal bit.
    pub action: Vec<f64>,
    pub terminal: bool,
}

impl CorpusRecord {
    /// Training target: the act mask plus the terminal bit for user records.
    pub fn target(&self) -> Vec<f64> {
        let mut y = self.action.clone();
        if self.role == Role::User {
            y.push(f64::from(u8::from(self.terminal)));
        }
        y
    }
}

#[derive(Serialize, Deserialize)]
struct Row {
    dialog_id: usize,
    turn: usize,
    role: String,
    state_vector: String,
    action_multihot: String,
    terminal_bit: u8,
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn split(s: &str, field: &str, line: usize) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|t| {
            t.trim().parse::<f64>().map_err(|e| Error::Parse {
                field: format!("line {line}: {field}"),
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn write_corpus<W: Write>(writer: W, records: &[CorpusRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(Row {
            dialog_id: r.dialog_id,
            turn: r.turn,
            role: r.role.as_str().to_string(),
            state_vector: join(&r.state),
            action_multihot: join(&r.action),
            terminal_bit: u8::from(r.terminal),
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_corpus<R: Read>(reader: R) -> Result<Vec<CorpusRecord>> {
    let mut rd = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in rd.deserialize::<Row>().enumerate() {
        let line = i + 2;
        let row = row?;
        let role = row.role.parse::<Role>().map_err(|_| Error::Parse {
            field: format!("line {line}: role"),
            message: format!("unknown role `{}`", row.role),
        })?;
        let terminal = match row.terminal_bit {
            0 => false,
            1 => true,
            b => {
                return Err(Error::Parse { field: format!("line {line}: terminal_bit"), message: format!("{b} is not a bit") })
            }
        };
        out.push(CorpusRecord {
            dialog_id: row.dialog_id,
            turn: row.turn,
            role,
            state: split(&row.state_vector, "state_vector", line)?,
            action: split(&row.action_multihot, "action_multihot", line)?,
            terminal,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let records = vec![
            CorpusRecord { dialog_id: 0, turn: 0, role: Role::User, state: vec![0.0, 1.0, 0.5], action: vec![1.0, 0.0], terminal: false },
            CorpusRecord { dialog_id: 0, turn: 0, role: Role::System, state: vec![1.0], action: vec![0.0, 0.0, 1.0], terminal: false },
            CorpusRecord { dialog_id: 3, turn: 4, role: Role::User, state: vec![0.25], action: vec![0.0, 1.0], terminal: true },
        ];
        let mut buf = Vec::new();
        write_corpus(&mut buf, &records).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("dialog_id,turn,role,state_vector,action_multihot,terminal_bit\n"));
        assert!(text.contains("0,0,user,\"0,1,0.5\",\"1,0\",0"));
        assert_eq!(read_corpus(buf.as_slice()).unwrap(), records);
        assert_eq!(records[2].target(), vec![0.0, 1.0, 1.0]);
        assert_eq!(records[1].target(), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn bad_fields_are_reported() {
        let text = "dialog_id,turn,role,state_vector,action_multihot,terminal_bit\n0,0,robot,\"1\",\"1\",0\n";
        assert!(matches!(read_corpus(text.as_bytes()), Err(Error::Parse { .. })));
        let text = "dialog_id,turn,role,state_vector,action_multihot,terminal_bit\n0,0,user,\"1,x\",\"1\",0\n";
        assert!(matches!(read_corpus(text.as_bytes()), Err(Error::Parse { .. })));
    }
}
