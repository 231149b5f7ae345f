//! Canonical Huffman coding of `u16`-range symbol streams.
//!
//! Stream layout: `symbol count u32 | distinct u32 | (symbol u16, length u8)...
//! | payload length u32 | payload`. Table entries are in canonical order
//! (length, then symbol) and codes are packed most significant bit first.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use crate::bytes::{Reader, Writer};
use crate::error::{Error, Result};

pub const MAX_SYMBOL: u32 = u16::MAX as u32;
pub const MAX_CODE_LEN: u8 = 32;

/// Code lengths for each symbol with nonzero count, limited to [`MAX_CODE_LEN`].
fn code_lengths(counts: &BTreeMap<u32, u64>) -> Vec<(u32, u8)> {
    if counts.len() == 1 {
        return vec![(*counts.keys().next().unwrap(), 1)];
    }
    let mut weights: Vec<u64> = counts.values().copied().collect();
    loop {
        let lengths = tree_depths(&weights);
        if lengths.iter().all(|&l| l <= MAX_CODE_LEN) {
            return counts.keys().copied().zip(lengths).collect();
        }
        weights.iter_mut().for_each(|w| *w = w.div_ceil(2));
    }
}

fn tree_depths(weights: &[u64]) -> Vec<u8> {
    let n = weights.len();
    // Nodes 0..n are leaves; parents are appended as they are formed.
    let mut parent = vec![usize::MAX; 2 * n - 1];
    let mut heap: BinaryHeap<Reverse<(u64, usize)>> = weights
        .iter()
        .enumerate()
        .map(|(i, &w)| Reverse((w, i)))
        .collect();
    let mut next = n;
    while heap.len() > 1 {
        let Reverse((wa, a)) = heap.pop().unwrap();
        let Reverse((wb, b)) = heap.pop().unwrap();
        parent[a] = next;
        parent[b] = next;
        heap.push(Reverse((wa + wb, next)));
        next += 1;
    }
    let mut depth = vec![0u8; 2 * n - 1];
    for node in (0..2 * n - 2).rev() {
        depth[node] = depth[parent[node]].saturating_add(1);
    }
    depth.truncate(n);
    depth
}

/// Assigns canonical codes to `(symbol, length)` pairs sorted by (length, symbol).
fn canonical_codes(table: &[(u32, u8)]) -> Vec<u64> {
    let mut codes = Vec::with_capacity(table.len());
    let mut code = 0u64;
    let mut prev_len = table.first().map_or(0, |e| e.1);
    for (i, &(_, len)) in table.iter().enumerate() {
        if i > 0 {
            code = (code + 1) << (len - prev_len);
        }
        codes.push(code);
        prev_len = len;
    }
    codes
}

struct BitWriter {
    out: Vec<u8>,
    acc: u64,
    filled: u32,
}

impl BitWriter {
    fn put(&mut self, code: u64, len: u8) {
        for shift in (0..len).rev() {
            self.acc = (self.acc << 1) | ((code >> shift) & 1);
            self.filled += 1;
            if self.filled == 8 {
                self.out.push(self.acc as u8);
                self.acc = 0;
                self.filled = 0;
            }
        }
    }

    fn finish(mut self) -> Vec<u8> {
        if self.filled > 0 {
            self.out.push((self.acc << (8 - self.filled)) as u8);
        }
        self.out
    }
}

pub fn entropy_encode(symbols: &[u32]) -> Result<Vec<u8>> {
    let mut counts = BTreeMap::new();
    for &s in symbols {
        if s > MAX_SYMBOL {
            return Err(Error::InvalidConfig(format!(
                "symbol {s} exceeds the 16-bit alphabet"
            )));
        }
        *counts.entry(s).or_insert(0u64) += 1;
    }
    let mut table = if counts.is_empty() {
        Vec::new()
    } else {
        code_lengths(&counts)
    };
    table.sort_by_key(|&(s, l)| (l, s));
    let codes = canonical_codes(&table);
    let lookup: BTreeMap<u32, (u64, u8)> = table
        .iter()
        .zip(&codes)
        .map(|(&(s, l), &c)| (s, (c, l)))
        .collect();

    let mut bits = BitWriter {
        out: Vec::new(),
        acc: 0,
        filled: 0,
    };
    for s in symbols {
        let (code, len) = lookup[s];
        bits.put(code, len);
    }
    let mut w = Writer::default();
    w.u32(symbols.len() as u32);
    w.u32(table.len() as u32);
    for &(s, l) in &table {
        w.u16(s as u16);
        w.u8(l);
    }
    w.blob(&bits.finish());
    Ok(w.buf)
}

pub fn entropy_decode(bytes: &[u8]) -> Result<Vec<u32>> {
    let mut r = Reader::new(bytes, Error::CorruptStream);
    let symbols = decode_stream(&mut r)?;
    r.finish()?;
    Ok(symbols)
}

pub(crate) fn decode_stream(r: &mut Reader<'_>) -> Result<Vec<u32>> {
    let count = r.u32("symbol count")? as usize;
    let distinct = r.u32("table size")? as usize;
    if distinct > MAX_SYMBOL as usize + 1 {
        return r.fail(format!("table lists {distinct} symbols"));
    }
    let mut table = Vec::with_capacity(distinct);
    for _ in 0..distinct {
        let s = r.u16("table symbol")? as u32;
        let l = r.u8("code length")?;
        table.push((s, l));
    }
    let payload = r.blob("payload")?;
    if distinct == 0 {
        if count != 0 || !payload.is_empty() {
            return r.fail("symbols present without a code table");
        }
        return Ok(Vec::new());
    }
    if table.iter().any(|&(_, l)| l == 0 || l > MAX_CODE_LEN) {
        return r.fail("code length out of range");
    }
    if table
        .windows(2)
        .any(|p| (p[0].1, p[0].0) >= (p[1].1, p[1].0))
    {
        return r.fail("code table is not in canonical order");
    }
    let kraft: u128 = table
        .iter()
        .map(|&(_, l)| 1u128 << (MAX_CODE_LEN - l))
        .sum();
    if kraft > 1u128 << MAX_CODE_LEN {
        return r.fail("code lengths are over-subscribed");
    }

    // Per length: first canonical code and index of its first table entry.
    let codes = canonical_codes(&table);
    let mut first: Vec<Option<(u64, usize, usize)>> = vec![None; MAX_CODE_LEN as usize + 1];
    for (i, &(_, l)) in table.iter().enumerate() {
        match &mut first[l as usize] {
            Some((_, _, n)) => *n += 1,
            slot @ None => *slot = Some((codes[i], i, 1)),
        }
    }
    let total_bits = payload.len() as u64 * 8;
    let mut pos = 0u64;
    let mut out = Vec::with_capacity(count.min(1 << 24));
    for _ in 0..count {
        let mut code = 0u64;
        let mut len = 0usize;
        loop {
            if pos >= total_bits {
                return r.fail("payload ends inside a code");
            }
            let bit = (payload[(pos / 8) as usize] >> (7 - pos % 8)) & 1;
            pos += 1;
            code = (code << 1) | bit as u64;
            len += 1;
            if len > MAX_CODE_LEN as usize {
                return r.fail("no code matches the payload bits");
            }
            if let Some((start, index, n)) = first[len] {
                if code >= start && code < start + n as u64 {
                    out.push(table[index + (code - start) as usize].0);
                    break;
                }
            }
        }
    }
    if payload.len() as u64 != pos.div_ceil(8) {
        return r.fail("payload length does not match the coded symbols");
    }
    Ok(out)
}
