//! Serde adapters for JSON output.

/// `f64` that writes NaN as `null` and reads `null` back as NaN.
pub mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_nan() { s.serialize_none() } else { s.serialize_f64(*v) }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

/// `DVector<f64>` as a plain JSON list.
pub mod plain_vec {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}

#[cfg(test)]
mod tests {
    use nalgebra::DVector;
    use serde::{Deserialize, Serialize};

    #[derive(Debug, Serialize, Deserialize)]
    struct Probe {
        #[serde(with = "super::nan_as_null")]
        a: f64,
        #[serde(with = "super::plain_vec")]
        v: DVector<f64>,
    }

    #[test]
    fn nan_and_vectors_round_trip() {
        let p = Probe { a: f64::NAN, v: DVector::from_vec(vec![1.5, -2.0]) };
        let text = serde_json::to_string(&p).unwrap();
        assert_eq!(text, r#"{"a":null,"v":[1.5,-2.0]}"#);
        let back: Probe = serde_json::from_str(&text).unwrap();
        assert!(back.a.is_nan());
        assert_eq!(back.v, p.v);
    }
}
