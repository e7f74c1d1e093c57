//! Serde helpers for reals that may be infinite (JSON has no literal for them).

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Real {
    Num(f64),
    Text(String),
}

fn encode(v: f64) -> Real {
    if v.is_finite() {
        Real::Num(v)
    } else if v.is_nan() {
        Real::Text("nan".into())
    } else if v > 0.0 {
        Real::Text("inf".into())
    } else {
        Real::Text("-inf".into())
    }
}

fn decode<E: serde::de::Error>(r: Real) -> Result<f64, E> {
    match r {
        Real::Num(v) => Ok(v),
        Real::Text(s) => match s.as_str() {
            "inf" | "+inf" | "Infinity" => Ok(f64::INFINITY),
            "-inf" | "-Infinity" => Ok(f64::NEG_INFINITY),
            "nan" | "NaN" => Ok(f64::NAN),
            other => Err(E::custom(format!("not a real number: {other}"))),
        },
    }
}

pub mod vec_f64 {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let enc: Vec<Real> = v.iter().map(|&x| encode(x)).collect();
        enc.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let raw = Vec::<Real>::deserialize(d)?;
        raw.into_iter().map(decode).collect()
    }
}
