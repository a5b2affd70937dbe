//! Minimal strict XML subset used by the dependability contracts.
//!
//! The dialect is deliberately tiny: elements, nested elements, text, and the
//! five predefined entities. No attributes, comments, processing
//! instructions, CDATA, or doctypes — contracts never use them, and a closed
//! grammar keeps validation airtight. The parser is total: any byte string
//! produces either a tree or an error with line/column, never a panic.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq, Clone)]
#[error("line {line}, column {col}: {message}")]
pub struct XmlError {
    pub line: u32,
    pub col: u32,
    pub message: String,
}

/// One element. `text` is the concatenation of all character data directly
/// inside the element, whitespace-trimmed at both ends.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct XmlNode {
    pub name: String,
    pub text: String,
    pub children: Vec<XmlNode>,
    /// Line of the opening tag, for error reporting.
    pub line: u32,
}

const MAX_DEPTH: usize = 64;

pub fn parse_document(input: &str) -> Result<XmlNode, XmlError> {
    let mut s = Scanner { bytes: input.as_bytes(), pos: 0, line: 1, col: 1 };
    s.skip_whitespace();
    if s.peek() != Some(b'<') {
        return Err(s.error("expected a root element"));
    }
    let root = s.parse_element(0)?;
    s.skip_whitespace();
    if s.pos < s.bytes.len() {
        return Err(s.error("content after the root element"));
    }
    Ok(root)
}

struct Scanner<'a> {
    bytes: &'a [u8],
    pos: usize,
    line: u32,
    col: u32,
}

impl<'a> Scanner<'a> {
    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<u8> {
        let b = self.peek()?;
        self.pos += 1;
        if b == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(b)
    }

    fn error(&self, message: impl Into<String>) -> XmlError {
        XmlError { line: self.line, col: self.col, message: message.into() }
    }

    fn skip_whitespace(&mut self) {
        while matches!(self.peek(), Some(b' ' | b'\t' | b'\r' | b'\n')) {
            self.bump();
        }
    }

    fn expect(&mut self, byte: u8) -> Result<(), XmlError> {
        if self.peek() == Some(byte) {
            self.bump();
            Ok(())
        } else {
            Err(self.error(format!("expected '{}'", byte as char)))
        }
    }

    fn parse_name(&mut self) -> Result<String, XmlError> {
        let start = self.pos;
        match self.peek() {
            Some(b) if b.is_ascii_alphabetic() || b == b'_' => {
                self.bump();
            }
            _ => return Err(self.error("expected a tag name")),
        }
        while let Some(b) = self.peek() {
            if b.is_ascii_alphanumeric() || matches!(b, b'_' | b'-' | b'.') {
                self.bump();
            } else {
                break;
            }
        }
        // Names are ASCII by construction, safe to slice.
        Ok(std::str::from_utf8(&self.bytes[start..self.pos]).unwrap().to_string())
    }

    fn parse_entity(&mut self) -> Result<char, XmlError> {
        // Caller consumed '&'.
        let start = self.pos;
        for _ in 0..5 {
            match self.peek() {
                Some(b';') => {
                    let name = &self.bytes[start..self.pos];
                    self.bump();
                    return match name {
                        b"lt" => Ok('<'),
                        b"gt" => Ok('>'),
                        b"amp" => Ok('&'),
                        b"quot" => Ok('"'),
                        b"apos" => Ok('\''),
                        _ => Err(self.error("unknown entity")),
                    };
                }
                Some(_) => {
                    self.bump();
                }
                None => break,
            }
        }
        Err(self.error("unterminated entity (expected ';')"))
    }

    fn parse_element(&mut self, depth: usize) -> Result<XmlNode, XmlError> {
        if depth >= MAX_DEPTH {
            return Err(self.error("elements nested too deeply"));
        }
        let line = self.line;
        self.expect(b'<')?;
        match self.peek() {
            Some(b'!') | Some(b'?') => {
                return Err(self.error("comments, doctypes and processing instructions are not supported"))
            }
            _ => {}
        }
        let name = self.parse_name()?;
        self.skip_whitespace();
        if self.peek() == Some(b'/') {
            self.bump();
            self.expect(b'>')
                .map_err(|_| self.error("expected '>' after '/' in a self-closing tag"))?;
            return Ok(XmlNode { name, text: String::new(), children: Vec::new(), line });
        }
        if self.peek() != Some(b'>') {
            return Err(self.error(format!("expected '>' to close '<{name}' (attributes are not supported)")));
        }
        self.bump();

        let mut text = String::new();
        let mut children = Vec::new();
        loop {
            match self.peek() {
                None => return Err(self.error(format!("unexpected end of input inside <{name}>"))),
                Some(b'<') => {
                    if self.bytes.get(self.pos + 1) == Some(&b'/') {
                        self.bump();
                        self.bump();
                        let close_line = self.line;
                        let close_col = self.col;
                        let close = self.parse_name()?;
                        if close != name {
                            return Err(XmlError {
                                line: close_line,
                                col: close_col,
                                message: format!("mismatched closing tag: expected </{name}>, found </{close}>"),
                            });
                        }
                        self.skip_whitespace();
                        self.expect(b'>')?;
                        let text = text.trim().to_string();
                        return Ok(XmlNode { name, text, children, line });
                    }
                    children.push(self.parse_element(depth + 1)?);
                }
                Some(b'&') => {
                    self.bump();
                    text.push(self.parse_entity()?);
                }
                Some(_) => {
                    // Collect a raw text run up to the next markup byte. The
                    // input is valid UTF-8, so slicing between ASCII
                    // delimiters stays on char boundaries.
                    let start = self.pos;
                    while let Some(b) = self.peek() {
                        if b == b'<' || b == b'&' {
                            break;
                        }
                        self.bump();
                    }
                    text.push_str(std::str::from_utf8(&self.bytes[start..self.pos]).unwrap());
                }
            }
        }
    }
}

/// Escape character data for embedding in an element.
pub fn escape_text(value: &str) -> String {
    let mut out = String::with_capacity(value.len());
    for c in value.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            _ => out.push(c),
        }
    }
    out
}
