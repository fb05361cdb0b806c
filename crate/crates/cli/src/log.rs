use serde_json::{json, Map, Value};

/// Line-oriented JSON logs on stderr.
pub struct Logger {
    quiet: bool,
}

impl Logger {
    pub fn new(quiet: bool) -> Self {
        Self { quiet }
    }

    fn emit(&self, level: &str, event: &str, fields: Value) {
        let mut obj = Map::new();
        obj.insert("level".into(), json!(level));
        obj.insert("event".into(), json!(event));
        if let Value::Object(f) = fields {
            obj.extend(f);
        }
        eprintln!("{}", Value::Object(obj));
    }

    pub fn info(&self, event: &str, fields: Value) {
        if !self.quiet {
            self.emit("info", event, fields);
        }
    }

    pub fn error(&self, event: &str, msg: &str) {
        self.emit("error", event, json!({ "message": msg }));
    }
}
