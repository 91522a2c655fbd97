//! Lossless text encoding of `f64` as C99-style hexadecimal floats
//! (`0x1.8p-1`), plus `inf`, `-inf` and `nan`.
//!
//! Used by the chain file format so that a chain written by one process
//! replays bit-identically in another.

use serde::{de, Deserialize, Deserializer, Serializer};

const MANT_BITS: u32 = 52;
const MANT_MASK: u64 = (1 << MANT_BITS) - 1;

/// Formats `x` as a canonical hex float.
pub fn format(x: f64) -> String {
    if x.is_nan() {
        return "nan".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let bits = x.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let biased = ((bits >> MANT_BITS) & 0x7ff) as i32;
    let mant = bits & MANT_MASK;
    if biased == 0 && mant == 0 {
        return format!("{sign}0x0p+0");
    }
    let (lead, exp) = if biased == 0 { (0, -1022) } else { (1, biased - 1023) };
    let mut frac = format!("{mant:013x}");
    while frac.ends_with('0') {
        frac.pop();
    }
    let exp_sign = if exp >= 0 { "+" } else { "" };
    if frac.is_empty() {
        format!("{sign}0x{lead}p{exp_sign}{exp}")
    } else {
        format!("{sign}0x{lead}.{frac}p{exp_sign}{exp}")
    }
}

/// Parses the canonical form produced by [`format`].
pub fn parse(s: &str) -> Result<f64, String> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let apply = |v: f64| if neg { -v } else { v };
    match body {
        "inf" => return Ok(apply(f64::INFINITY)),
        "nan" if !neg => return Ok(f64::NAN),
        _ => {}
    }
    let body = body
        .strip_prefix("0x")
        .ok_or_else(|| format!("hex float must start with 0x: {s:?}"))?;
    let (mantissa, exp) = body
        .split_once('p')
        .ok_or_else(|| format!("hex float missing exponent: {s:?}"))?;
    let exp: i32 = exp
        .parse()
        .map_err(|_| format!("bad exponent in hex float {s:?}"))?;
    let (lead, frac) = match mantissa.split_once('.') {
        Some((l, f)) => (l, f),
        None => (mantissa, ""),
    };
    let lead = match lead {
        "0" => 0u64,
        "1" => 1u64,
        _ => return Err(format!("leading digit must be 0 or 1: {s:?}")),
    };
    if frac.len() > 13 || !frac.chars().all(|c| c.is_ascii_hexdigit()) {
        return Err(format!("bad fraction in hex float {s:?}"));
    }
    let frac_bits = if frac.is_empty() {
        0
    } else {
        u64::from_str_radix(frac, 16).map_err(|e| e.to_string())? << (4 * (13 - frac.len()))
    };
    let bits = if lead == 1 {
        if !(-1022..=1023).contains(&exp) {
            return Err(format!("exponent out of range in {s:?}"));
        }
        (((exp + 1023) as u64) << MANT_BITS) | frac_bits
    } else if frac_bits == 0 {
        0
    } else if exp == -1022 {
        frac_bits
    } else {
        return Err(format!("subnormal hex float must use exponent -1022: {s:?}"));
    };
    Ok(apply(f64::from_bits(bits)))
}

pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format(*x))
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    let s = String::deserialize(d)?;
    parse(&s).map_err(de::Error::custom)
}

/// `#[serde(with = "hexfloat::vec")]` for `Vec<f64>` fields.
pub mod vec {
    use super::*;
    use serde::ser::SerializeSeq;

    pub fn serialize<S: Serializer>(xs: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(xs.len()))?;
        for x in xs {
            seq.serialize_element(&format(*x))?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let raw = Vec::<String>::deserialize(d)?;
        raw.iter()
            .map(|s| parse(s).map_err(de::Error::custom))
            .collect()
    }
}
