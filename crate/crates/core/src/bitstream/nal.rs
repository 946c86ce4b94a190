//! Annex-B byte stream framing.

use crate::error::{Error, Result};

pub const NAL_SLICE_NON_IDR: u8 = 1;
pub const NAL_SLICE_IDR: u8 = 5;
pub const NAL_SPS: u8 = 7;
pub const NAL_PPS: u8 = 8;

/// One NAL unit as found in an Annex-B stream.
///
/// `raw` keeps the escaped bytes (header included) so that [`NalUnit::framed`]
/// reproduces the exact input; `payload` is the unescaped RBSP after the
/// one-byte header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NalUnit {
    pub nal_ref_idc: u8,
    pub nal_unit_type: u8,
    pub payload: Vec<u8>,
    raw: Vec<u8>,
    /// Zero bytes in front of the `00 00 01` prefix (1 for a 4-byte start code).
    zero_prefix: usize,
    /// Zero bytes after the unit that are not followed by another start code.
    trailing_zeros: usize,
}

impl NalUnit {
    pub fn is_slice(&self) -> bool {
        matches!(self.nal_unit_type, NAL_SLICE_NON_IDR | NAL_SLICE_IDR)
    }

    pub fn is_idr(&self) -> bool {
        self.nal_unit_type == NAL_SLICE_IDR
    }

    /// Escaped bytes of the unit, header included.
    pub fn raw(&self) -> &[u8] {
        &self.raw
    }

    /// The unit with its start code and surrounding zero bytes, as it
    /// appeared in the stream.
    pub fn framed(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.zero_prefix];
        out.extend_from_slice(&[0, 0, 1]);
        out.extend_from_slice(&self.raw);
        out.extend(std::iter::repeat_n(0u8, self.trailing_zeros));
        out
    }

    /// Builds a unit from a header and an unescaped payload, inserting
    /// emulation-prevention bytes. Uses a 4-byte start code. The payload is
    /// an RBSP and must end in a non-zero byte (the stop bit).
    pub fn from_payload(nal_ref_idc: u8, nal_unit_type: u8, payload: &[u8]) -> Self {
        let header = ((nal_ref_idc & 3) << 5) | (nal_unit_type & 0x1f);
        let mut raw = vec![header];
        raw.extend(escape(payload));
        NalUnit {
            nal_ref_idc: nal_ref_idc & 3,
            nal_unit_type: nal_unit_type & 0x1f,
            payload: payload.to_vec(),
            raw,
            zero_prefix: 1,
            trailing_zeros: 0,
        }
    }
}

/// Removes emulation-prevention bytes: every `00 00 03` becomes `00 00`.
pub fn unescape(data: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(data.len());
    let mut zeros = 0;
    for &b in data {
        if zeros >= 2 && b == 3 {
            zeros = 0;
            continue;
        }
        zeros = if b == 0 { zeros + 1 } else { 0 };
        out.push(b);
    }
    out
}

/// Inserts emulation-prevention bytes so no `00 00 0x` (x <= 3) appears.
pub fn escape(payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(payload.len() + payload.len() / 64);
    let mut zeros = 0;
    for &b in payload {
        if zeros >= 2 && b <= 3 {
            out.push(3);
            zeros = 0;
        }
        zeros = if b == 0 { zeros + 1 } else { 0 };
        out.push(b);
    }
    out
}

fn find_start_code(data: &[u8], from: usize) -> Option<usize> {
    let mut i = from;
    while i + 3 <= data.len() {
        if data[i + 2] > 1 {
            i += 3;
        } else if data[i] == 0 && data[i + 1] == 0 && data[i + 2] == 1 {
            return Some(i);
        } else {
            i += 1;
        }
    }
    None
}

/// Splits an Annex-B stream into NAL units.
pub fn split_nal_units(stream: &[u8]) -> Result<Vec<NalUnit>> {
    if stream.is_empty() {
        return Ok(Vec::new());
    }
    let first = find_start_code(stream, 0)
        .ok_or_else(|| Error::MalformedStream("no start code found".into()))?;
    if stream[..first].iter().any(|&b| b != 0) {
        return Err(Error::MalformedStream(format!(
            "{first} bytes of non-zero data before the first start code"
        )));
    }

    let mut units = Vec::new();
    let mut zero_prefix = first;
    let mut pos = first + 3;
    loop {
        let next = find_start_code(stream, pos);
        let end = next.unwrap_or(stream.len());
        let body = &stream[pos..end];
        let content_len = body.iter().rposition(|&b| b != 0).map_or(0, |i| i + 1);
        if content_len == 0 {
            return Err(Error::TruncatedUnit { offset: pos });
        }
        let raw = &body[..content_len];
        let header = raw[0];
        if header & 0x80 != 0 {
            return Err(Error::MalformedStream(format!(
                "forbidden_zero_bit set at byte offset {pos}"
            )));
        }
        if let Some(at) = raw.windows(3).position(|w| w[0] == 0 && w[1] == 0 && w[2] <= 2) {
            return Err(Error::MalformedStream(format!(
                "unescaped zero run at byte offset {}",
                pos + at
            )));
        }
        let trailing = body.len() - content_len;
        let (this_trailing, next_prefix) = if next.is_some() {
            (0, trailing)
        } else {
            (trailing, 0)
        };
        units.push(NalUnit {
            nal_ref_idc: (header >> 5) & 3,
            nal_unit_type: header & 0x1f,
            payload: unescape(&raw[1..]),
            raw: raw.to_vec(),
            zero_prefix,
            trailing_zeros: this_trailing,
        });
        match next {
            Some(n) => {
                zero_prefix = next_prefix;
                pos = n + 3;
            }
            None => break,
        }
    }
    Ok(units)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_unit() {
        let units = split_nal_units(&[0, 0, 1, 0x67, 0xAA]).unwrap();
        assert_eq!(units.len(), 1);
        assert_eq!(units[0].nal_unit_type, 7);
        assert_eq!(units[0].nal_ref_idc, 3);
        assert_eq!(units[0].payload, vec![0xAA]);
    }

    #[test]
    fn empty_stream() {
        assert!(split_nal_units(&[]).unwrap().is_empty());
    }

    #[test]
    fn emulation_prevention_removed() {
        let stream = [0, 0, 0, 1, 0x41, 0x11, 0, 0, 3, 1, 0x22];
        let units = split_nal_units(&stream).unwrap();
        assert_eq!(units[0].payload, vec![0x11, 0, 0, 1, 0x22]);
        assert_eq!(units[0].framed(), stream.to_vec());
    }

    #[test]
    fn errors() {
        assert!(matches!(
            split_nal_units(&[0x12, 0x34, 0x56]),
            Err(Error::MalformedStream(_))
        ));
        assert!(matches!(
            split_nal_units(&[0, 0, 1, 0x67, 0, 0, 1]),
            Err(Error::TruncatedUnit { .. })
        ));
        assert!(matches!(
            split_nal_units(&[0, 0, 1, 0xE7, 0x01]),
            Err(Error::MalformedStream(_))
        ));
    }

    #[test]
    fn escape_then_unescape() {
        let payload = [0, 0, 0, 0, 1, 0, 0, 2, 0, 0, 3, 0, 0];
        let escaped = escape(&payload);
        assert!(!escaped.windows(3).any(|w| w[0] == 0 && w[1] == 0 && w[2] <= 2));
        assert_eq!(unescape(&escaped), payload.to_vec());
    }
}
