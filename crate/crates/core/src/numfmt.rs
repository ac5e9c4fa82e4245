//! Report number encoding: every real is written as
//! `{"value": <6 significant digits>, "bits": "<IEEE-754 hex>"}` so reports
//! stay readable while remaining bit-exact for regression diffs.
//!
//! Use through `#[serde(with = "crate::numfmt::real")]` (or `opt_real`,
//! `vec_real`) on `f64` fields.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Serialize, Deserialize)]
struct Encoded {
    value: f64,
    bits: String,
}

/// Rounds to six significant digits.
pub fn round6(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.5e}").parse().unwrap_or(x)
}

fn encode(x: f64) -> Encoded {
    Encoded { value: round6(x), bits: format!("{:016x}", x.to_bits()) }
}

fn decode<E: serde::de::Error>(e: Encoded) -> Result<f64, E> {
    u64::from_str_radix(&e.bits, 16).map(f64::from_bits).map_err(E::custom)
}

pub mod real {
    use super::*;

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        encode(*x).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        decode(Encoded::deserialize(d)?)
    }
}

pub mod opt_real {
    use super::*;

    pub fn serialize<S: Serializer>(x: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        x.map(encode).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Option::<Encoded>::deserialize(d)?.map(decode).transpose()
    }
}

pub mod vec_real {
    use super::*;

    pub fn serialize<S: Serializer>(xs: &[f64], s: S) -> Result<S::Ok, S::Error> {
        xs.iter().map(|&x| encode(x)).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<Encoded>::deserialize(d)?.into_iter().map(decode).collect()
    }
}

pub mod pair_real {
    use super::*;

    pub fn serialize<S: Serializer>(x: &(f64, f64), s: S) -> Result<S::Ok, S::Error> {
        [encode(x.0), encode(x.1)].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(f64, f64), D::Error> {
        let v = Vec::<Encoded>::deserialize(d)?;
        if v.len() != 2 {
            return Err(D::Error::custom("expected a pair"));
        }
        let mut it = v.into_iter();
        Ok((decode(it.next().unwrap())?, decode(it.next().unwrap())?))
    }
}

pub mod opt_pair_real {
    use super::*;

    pub fn serialize<S: Serializer>(x: &Option<(f64, f64)>, s: S) -> Result<S::Ok, S::Error> {
        x.map(|(a, b)| [encode(a), encode(b)]).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<(f64, f64)>, D::Error> {
        match Option::<Vec<Encoded>>::deserialize(d)? {
            None => Ok(None),
            Some(v) if v.len() == 2 => {
                let mut it = v.into_iter();
                Ok(Some((decode(it.next().unwrap())?, decode(it.next().unwrap())?)))
            }
            Some(_) => Err(D::Error::custom("expected a pair")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize, Deserialize, PartialEq, Debug)]
    struct Probe {
        #[serde(with = "real")]
        a: f64,
        #[serde(with = "opt_real")]
        b: Option<f64>,
    }

    #[test]
    fn round_trips_bits() {
        let p = Probe { a: std::f64::consts::PI, b: None };
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, r#"{"a":{"value":3.14159,"bits":"400921fb54442d18"},"b":null}"#);
        assert_eq!(serde_json::from_str::<Probe>(&s).unwrap(), p);
    }

    #[test]
    fn six_significant_digits() {
        assert_eq!(round6(0.000123456789), 0.000123457);
        assert_eq!(round6(-42.6000001), -42.6);
    }
}
