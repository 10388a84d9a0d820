//! Path-tracking accessors over `serde_json::Value` so schema errors can
//! name the offending field (`video.fps`, `frames[3].detections[0].score`).

use serde_json::Value;

use crate::error::{Error, Result};

pub fn parse_document(bytes: &[u8]) -> Result<Value> {
    serde_json::from_slice(bytes).map_err(|e| Error::Parse { offset: byte_offset(bytes, &e), message: e.to_string() })
}

/// Converts serde_json's 1-based line/column into the 0-based offset of the offending byte.
fn byte_offset(bytes: &[u8], e: &serde_json::Error) -> usize {
    let (line, column) = (e.line(), e.column());
    if line == 0 {
        return 0;
    }
    let mut current = 1;
    let mut start = 0;
    for (i, &b) in bytes.iter().enumerate() {
        if current == line {
            break;
        }
        if b == b'\n' {
            current += 1;
            start = i + 1;
        }
    }
    (start + column.saturating_sub(1)).min(bytes.len())
}

#[derive(Debug, Clone)]
pub struct Node<'a> {
    value: &'a Value,
    path: String,
}

impl<'a> Node<'a> {
    pub fn root(value: &'a Value) -> Self {
        Node { value, path: String::new() }
    }

    pub fn path(&self) -> &str {
        if self.path.is_empty() {
            "$"
        } else {
            &self.path
        }
    }

    pub fn value(&self) -> &'a Value {
        self.value
    }

    fn child_path(&self, name: &str) -> String {
        if self.path.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.path)
        }
    }

    fn fail<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::schema(self.path(), message))
    }

    pub fn opt_field(&self, name: &str) -> Result<Option<Node<'a>>> {
        let Some(obj) = self.value.as_object() else {
            return self.fail("expected an object");
        };
        Ok(obj.get(name).filter(|v| !v.is_null()).map(|value| Node { value, path: self.child_path(name) }))
    }

    pub fn field(&self, name: &str) -> Result<Node<'a>> {
        match self.opt_field(name)? {
            Some(n) => Ok(n),
            None => Err(Error::schema(self.child_path(name), "missing required field")),
        }
    }

    pub fn array(&self) -> Result<Vec<Node<'a>>> {
        let Some(items) = self.value.as_array() else {
            return self.fail("expected an array");
        };
        Ok(items
            .iter()
            .enumerate()
            .map(|(i, value)| Node { value, path: format!("{}[{i}]", self.path()) })
            .collect())
    }

    pub fn f64(&self) -> Result<f64> {
        match self.value.as_f64() {
            Some(v) if v.is_finite() => Ok(v),
            _ => self.fail("expected a finite number"),
        }
    }

    pub fn u64(&self) -> Result<u64> {
        match self.value.as_u64() {
            Some(v) => Ok(v),
            None => self.fail("expected a nonnegative integer"),
        }
    }

    pub fn u32(&self) -> Result<u32> {
        let v = self.u64()?;
        u32::try_from(v).or_else(|_| self.fail("integer out of range"))
    }

    pub fn i64(&self) -> Result<i64> {
        match self.value.as_i64() {
            Some(v) => Ok(v),
            None => self.fail("expected an integer"),
        }
    }

    pub fn bool(&self) -> Result<bool> {
        match self.value.as_bool() {
            Some(v) => Ok(v),
            None => self.fail("expected a boolean"),
        }
    }

    pub fn str(&self) -> Result<&'a str> {
        match self.value.as_str() {
            Some(v) => Ok(v),
            None => self.fail("expected a string"),
        }
    }

    /// A fixed-length array of numbers.
    pub fn numbers<const N: usize>(&self) -> Result<[f64; N]> {
        let items = self.array()?;
        if items.len() != N {
            return self.fail(format!("expected {N} numbers, found {}", items.len()));
        }
        let mut out = [0.0; N];
        for (slot, item) in out.iter_mut().zip(&items) {
            *slot = item.f64()?;
        }
        Ok(out)
    }
}
