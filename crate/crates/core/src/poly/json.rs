//! JSON form of a polynomial map:
//! `{n, out, alpha, field: "real"|"complex", terms: [{m: [..], c: [..]}]}`.
//!
//! For complex maps each coefficient vector is written as interleaved
//! `[re_0, im_0, re_1, im_1, ...]`. Only monomials with a nonzero
//! coefficient are listed.

use std::sync::Arc;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::map::{ConjPairing, Field, PolyMap, Scalar};
use super::multiindex::MultiIndexSet;

#[derive(Serialize, Deserialize)]
struct Term {
    m: Vec<u32>,
    c: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Repr {
    n: usize,
    out: usize,
    alpha: usize,
    field: Field,
    terms: Vec<Term>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pairing: Option<ConjPairing>,
}

impl<T: Scalar> Serialize for PolyMap<T> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let set = self.index_set();
        let mut terms = Vec::new();
        for (i, m) in set.iter().enumerate() {
            let col = self.coeffs().column(i);
            if col.iter().all(|c| *c == T::zero()) {
                continue;
            }
            let mut c = Vec::with_capacity(col.len() * 2);
            for v in col.iter() {
                let (re, im) = v.parts();
                c.push(re);
                if T::FIELD == Field::Complex {
                    c.push(im);
                }
            }
            terms.push(Term { m: m.to_vec(), c });
        }
        Repr {
            n: self.domain_dim(),
            out: self.codomain_dim(),
            alpha: self.alpha(),
            field: T::FIELD,
            terms,
            pairing: self.pairing().cloned(),
        }
        .serialize(s)
    }
}

impl<'de, T: Scalar> Deserialize<'de> for PolyMap<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let repr = Repr::deserialize(d)?;
        if repr.field != T::FIELD {
            return Err(D::Error::custom(format!(
                "expected a {:?} polynomial map, found {:?}",
                T::FIELD,
                repr.field
            )));
        }
        let set = Arc::new(MultiIndexSet::new(repr.n, repr.alpha).map_err(D::Error::custom)?);
        let mut p = PolyMap::<T>::zeros_on(set.clone(), repr.out);
        let width = if T::FIELD == Field::Complex { 2 } else { 1 };
        for term in &repr.terms {
            let i = set
                .position(&term.m)
                .ok_or_else(|| D::Error::custom(format!("exponent {:?} outside the index set", term.m)))?;
            if term.c.len() != repr.out * width {
                return Err(D::Error::custom(format!(
                    "coefficient vector for {:?} has length {}, expected {}",
                    term.m,
                    term.c.len(),
                    repr.out * width
                )));
            }
            for j in 0..repr.out {
                let (re, im) = if width == 2 {
                    (term.c[2 * j], term.c[2 * j + 1])
                } else {
                    (term.c[j], 0.0)
                };
                p.coeffs_mut()[(j, i)] = T::from_parts(re, im).map_err(D::Error::custom)?;
            }
        }
        match repr.pairing {
            Some(pairing) => p.with_pairing(pairing).map_err(D::Error::custom),
            None => Ok(p),
        }
    }
}
