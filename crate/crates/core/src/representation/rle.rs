//! Run-length coding of sparse layers over row-major pixel order.
//!
//! Layout (little endian): magic `FSRL`, one kind byte, run count `u32`,
//! then per run `start: u32`, `len: u32` and the run's payload. Label runs
//! carry a single `u16`; colour runs `len × 3` `u16`; scale runs `len` `u16`
//! in 8.8 fixed point.

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"FSRL";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Kind {
    Label = 1,
    Color = 2,
    Scale = 3,
}

/// Maximal runs of consecutive indices where `keep` holds and, for label
/// runs, the value stays the same.
fn runs(n: usize, keep: impl Fn(usize) -> bool, same: impl Fn(usize, usize) -> bool) -> Vec<(u32, u32)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        if !keep(i) {
            i += 1;
            continue;
        }
        let start = i;
        i += 1;
        while i < n && keep(i) && same(start, i) {
            i += 1;
        }
        out.push((start as u32, (i - start) as u32));
    }
    out
}

fn header(kind: Kind, count: usize) -> Vec<u8> {
    let mut b = MAGIC.to_vec();
    b.push(kind as u8);
    b.extend((count as u32).to_le_bytes());
    b
}

pub(crate) fn encode_labels(labels: &[u16]) -> Vec<u8> {
    let r = runs(labels.len(), |i| labels[i] > 0, |a, b| labels[a] == labels[b]);
    let mut b = header(Kind::Label, r.len());
    for (s, l) in r {
        b.extend(s.to_le_bytes());
        b.extend(l.to_le_bytes());
        b.extend(labels[s as usize].to_le_bytes());
    }
    b
}

pub(crate) fn encode_colors(support: &[bool], colors: &[[u16; 3]]) -> Vec<u8> {
    let r = runs(support.len(), |i| support[i], |_, _| true);
    let mut b = header(Kind::Color, r.len());
    for (s, l) in r {
        b.extend(s.to_le_bytes());
        b.extend(l.to_le_bytes());
        for c in &colors[s as usize..(s + l) as usize] {
            for v in c {
                b.extend(v.to_le_bytes());
            }
        }
    }
    b
}

pub(crate) fn encode_scales(support: &[bool], scales: &[u16]) -> Vec<u8> {
    let r = runs(support.len(), |i| support[i], |_, _| true);
    let mut b = header(Kind::Scale, r.len());
    for (s, l) in r {
        b.extend(s.to_le_bytes());
        b.extend(l.to_le_bytes());
        for v in &scales[s as usize..(s + l) as usize] {
            b.extend(v.to_le_bytes());
        }
    }
    b
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::CorruptContainer(format!("{} is truncated", self.what)));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Decoded runs as `(start, len, payload)` with the payload as raw `u16`s.
pub(crate) fn decode(bytes: &[u8], kind: Kind, n: usize, what: &'static str) -> Result<Vec<(usize, Vec<u16>)>> {
    let mut r = Reader { bytes, pos: 0, what };
    if r.take(4)? != MAGIC || r.take(1)?[0] != kind as u8 {
        return Err(Error::CorruptContainer(format!("{what} has a bad header")));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let start = r.u32()? as usize;
        let len = r.u32()? as usize;
        if start + len > n {
            return Err(Error::CorruptContainer(format!("{what} run exceeds the frame")));
        }
        let values = match kind {
            Kind::Label => 1,
            Kind::Color => 3 * len,
            Kind::Scale => len,
        };
        let payload = (0..values).map(|_| r.u16()).collect::<Result<Vec<_>>>()?;
        out.push((start, len_payload(len, payload)));
    }
    if r.pos != bytes.len() {
        return Err(Error::CorruptContainer(format!("{what} has trailing bytes")));
    }
    Ok(out)
}

fn len_payload(len: usize, mut payload: Vec<u16>) -> Vec<u16> {
    // label runs expand their single value
    if payload.len() == 1 && len > 1 {
        payload = vec![payload[0]; len];
    }
    payload
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_runs_split_on_value_changes() {
        let l = [0, 2, 2, 3, 0, 0, 3];
        let bytes = encode_labels(&l);
        let d = decode(&bytes, Kind::Label, l.len(), "Id").unwrap();
        assert_eq!(d, vec![(1, vec![2, 2]), (3, vec![3]), (6, vec![3])]);
    }

    #[test]
    fn empty_layer_has_zero_runs() {
        let bytes = encode_scales(&[false; 5], &[0; 5]);
        assert_eq!(bytes.len(), 9);
        assert!(decode(&bytes, Kind::Scale, 5, "B").unwrap().is_empty());
    }

    #[test]
    fn truncation_is_detected() {
        let bytes = encode_colors(&[true, true], &[[1, 2, 3], [4, 5, 6]]);
        assert!(matches!(
            decode(&bytes[..bytes.len() - 1], Kind::Color, 2, "F_Id"),
            Err(Error::CorruptContainer(_))
        ));
    }
}
