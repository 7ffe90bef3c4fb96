//! OSC 1.0 message codec (int32, float32 and string arguments).
//!
//! Bundles and time tags are not supported.

use std::fmt;

use super::NetError;

#[derive(Debug, Clone, PartialEq)]
pub enum OscArg {
    Int(i32),
    Float(f32),
    Str(String),
}

impl OscArg {
    fn tag(&self) -> u8 {
        match self {
            OscArg::Int(_) => b'i',
            OscArg::Float(_) => b'f',
            OscArg::Str(_) => b's',
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OscMessage {
    pub address: String,
    pub args: Vec<OscArg>,
}

impl OscMessage {
    pub fn new(address: impl Into<String>, args: Vec<OscArg>) -> Self {
        OscMessage { address: address.into(), args }
    }
}

impl fmt::Display for OscMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.address)?;
        for a in &self.args {
            match a {
                OscArg::Int(i) => write!(f, " {i}")?,
                OscArg::Float(x) => write!(f, " {x}")?,
                OscArg::Str(s) => write!(f, " {s:?}")?,
            }
        }
        Ok(())
    }
}

fn pad4(n: usize) -> usize {
    (n + 3) & !3
}

fn write_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(s.as_bytes());
    let padded = pad4(s.len() + 1);
    buf.resize(buf.len() + padded - s.len(), 0);
}

pub fn osc_encode(msg: &OscMessage) -> Result<Vec<u8>, NetError> {
    if !msg.address.starts_with('/') {
        return Err(NetError::Osc(format!("address '{}' must start with '/'", msg.address)));
    }
    let has_nul = |s: &str| s.as_bytes().contains(&0);
    if has_nul(&msg.address) || msg.args.iter().any(|a| matches!(a, OscArg::Str(s) if has_nul(s))) {
        return Err(NetError::Osc("strings may not contain NUL".into()));
    }
    let mut buf = Vec::with_capacity(32);
    write_str(&mut buf, &msg.address);
    let tags: String = std::iter::once(',').chain(msg.args.iter().map(|a| a.tag() as char)).collect();
    write_str(&mut buf, &tags);
    for a in &msg.args {
        match a {
            OscArg::Int(i) => buf.extend_from_slice(&i.to_be_bytes()),
            OscArg::Float(x) => buf.extend_from_slice(&x.to_be_bytes()),
            OscArg::Str(s) => write_str(&mut buf, s),
        }
    }
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn string(&mut self) -> Result<&'a str, NetError> {
        let rest = &self.bytes[self.pos..];
        let nul = rest.iter().position(|&b| b == 0).ok_or_else(|| NetError::Osc("unterminated string".into()))?;
        let end = pad4(nul + 1);
        if end > rest.len() {
            return Err(NetError::Osc("string padding runs past end of packet".into()));
        }
        if rest[nul..end].iter().any(|&b| b != 0) {
            return Err(NetError::Osc("non-zero string padding".into()));
        }
        let s = std::str::from_utf8(&rest[..nul]).map_err(|_| NetError::Osc("string is not UTF-8".into()))?;
        self.pos += end;
        Ok(s)
    }

    fn word(&mut self) -> Result<[u8; 4], NetError> {
        let w = self.bytes.get(self.pos..self.pos + 4).ok_or_else(|| NetError::Osc("truncated argument".into()))?;
        self.pos += 4;
        Ok(w.try_into().expect("slice of length 4"))
    }
}

pub fn osc_decode(bytes: &[u8]) -> Result<OscMessage, NetError> {
    if !bytes.len().is_multiple_of(4) {
        return Err(NetError::Osc(format!("packet length {} is not a multiple of 4", bytes.len())));
    }
    let mut r = Reader { bytes, pos: 0 };
    let address = r.string()?.to_string();
    if address == "#bundle" {
        return Err(NetError::Osc("bundles are not supported".into()));
    }
    if !address.starts_with('/') {
        return Err(NetError::Osc(format!("address '{address}' must start with '/'")));
    }
    let tags = r.string()?;
    let tags = tags.strip_prefix(',').ok_or_else(|| NetError::Osc("type tag string must start with ','".into()))?;
    let mut args = Vec::with_capacity(tags.len());
    for t in tags.bytes() {
        args.push(match t {
            b'i' => OscArg::Int(i32::from_be_bytes(r.word()?)),
            b'f' => OscArg::Float(f32::from_be_bytes(r.word()?)),
            b's' => OscArg::Str(r.string()?.to_string()),
            other => return Err(NetError::Osc(format!("unsupported type tag '{}'", other as char))),
        });
    }
    if r.pos != bytes.len() {
        return Err(NetError::Osc("trailing bytes after arguments".into()));
    }
    Ok(OscMessage { address, args })
}
