// SPDX-License-Identifier: Apache-2.0

use std::fmt::Display;

/// One line of `key=value` output. Values with spaces, quotes or `=` are
/// written as quoted strings.
#[derive(Clone, Debug, Default)]
pub struct Record {
    fields: Vec<(String, String)>,
}

impl Record {
    pub fn new(result: &str, command: &str) -> Self {
        Record::default()
            .kv("result", result)
            .kv("command", command)
    }

    pub fn kv(mut self, key: &str, value: impl Display) -> Self {
        self.fields.push((key.to_string(), value.to_string()));
        self
    }

    pub fn render(&self) -> String {
        self.fields
            .iter()
            .map(|(k, v)| {
                if v.is_empty() || v.contains(|c: char| c.is_whitespace() || c == '"' || c == '=') {
                    format!("{k}={v:?}")
                } else {
                    format!("{k}={v}")
                }
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn print(&self) {
        println!("{}", self.render());
    }
}
