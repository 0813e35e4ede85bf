//! Serde helpers for floats that may be infinite.
//!
//! JSON has no literal for `±∞` or NaN and `serde_json` writes them as
//! `null`, which does not read back. These helpers write them as the strings
//! `"inf"`, `"-inf"` and `"nan"` instead.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Repr {
    Num(f64),
    Text(String),
}

fn to_repr(v: f64) -> Repr {
    if v.is_finite() {
        Repr::Num(v)
    } else if v.is_nan() {
        Repr::Text("nan".into())
    } else if v > 0.0 {
        Repr::Text("inf".into())
    } else {
        Repr::Text("-inf".into())
    }
}

fn from_repr<E: serde::de::Error>(r: Repr) -> Result<f64, E> {
    match r {
        Repr::Num(v) => Ok(v),
        Repr::Text(s) => match s.as_str() {
            "inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            "nan" => Ok(f64::NAN),
            other => Err(E::custom(format!("expected a number, got `{other}`"))),
        },
    }
}

pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    to_repr(*v).serialize(s)
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    from_repr(Repr::deserialize(d)?)
}

/// Same encoding for `Option<f64>`.
pub mod option {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.map(to_repr).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Option::<Repr>::deserialize(d)?.map(from_repr).transpose()
    }
}

/// Same encoding for `Vec<f64>`.
pub mod vec {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|x| to_repr(*x)).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<Repr>::deserialize(d)?.into_iter().map(from_repr).collect()
    }
}

/// Formats a float for CSV cells with the same spellings.
pub fn csv_cell(v: f64) -> String {
    match to_repr(v) {
        Repr::Num(x) => format!("{x}"),
        Repr::Text(s) => s,
    }
}

#[cfg(test)]
mod tests {
    use serde::{Deserialize, Serialize};

    #[derive(Serialize, Deserialize, PartialEq, Debug)]
    struct Probe {
        #[serde(with = "super")]
        x: f64,
        #[serde(with = "super::option")]
        y: Option<f64>,
        #[serde(with = "super::vec")]
        z: Vec<f64>,
    }

    #[test]
    fn infinities_round_trip() {
        let p = Probe {
            x: f64::INFINITY,
            y: Some(f64::NEG_INFINITY),
            z: vec![1.5, f64::INFINITY],
        };
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, r#"{"x":"inf","y":"-inf","z":[1.5,"inf"]}"#);
        let back: Probe = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn finite_values_stay_numbers() {
        let p = Probe {
            x: 0.25,
            y: None,
            z: vec![],
        };
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, r#"{"x":0.25,"y":null,"z":[]}"#);
    }
}
