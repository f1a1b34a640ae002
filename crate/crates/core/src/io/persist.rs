//! Model persistence, one section per parameter tensor.
//!
//! Names are dotted paths under a caller-chosen prefix. Vectors are stored
//! as `1 × n` matrices, scalars as `1 × 1`, index lists as exact integers.

use std::path::Path;

use super::container::{load_sections, save_sections, Sections};
use crate::error::{Error, Result};
use crate::model::{BinaryHead, EnergyHead, Mlp, MlpClassifier};
use crate::numerics::Matrix;
use crate::subspace::{HaloModel, MembershipSplit, SubspaceModel};
use crate::synthesis::VosModel;
use crate::vmf::{SirenModel, VmfMixture};
use crate::wildfilter::{FilterBucket, FilterResult, SalModel};

/// Exact integers representable in an `f64`.
const MAX_INDEX: f64 = 9_007_199_254_740_992.0;

pub trait Persist: Sized {
    fn store(&self, prefix: &str, out: &mut Sections) -> Result<()>;
    fn restore(s: &Sections, prefix: &str) -> Result<Self>;
}

pub fn save<P: Persist>(path: impl AsRef<Path>, value: &P) -> Result<()> {
    let mut s = Sections::new();
    value.store("", &mut s)?;
    save_sections(path, &s)
}

pub fn load<P: Persist>(path: impl AsRef<Path>) -> Result<P> {
    P::restore(&load_sections(path)?, "")
}

pub fn to_sections<P: Persist>(value: &P) -> Result<Sections> {
    let mut s = Sections::new();
    value.store("", &mut s)?;
    Ok(s)
}

fn key(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

fn bad(name: &str, msg: impl std::fmt::Display) -> Error {
    Error::Format(format!("section '{name}': {msg}"))
}

fn put_vec(out: &mut Sections, name: String, v: &[f64]) -> Result<()> {
    out.insert(name, Matrix::new(1, v.len(), v.to_vec())?)
}

fn put_scalar(out: &mut Sections, name: String, v: f64) -> Result<()> {
    put_vec(out, name, &[v])
}

fn put_indices(out: &mut Sections, name: String, v: &[usize]) -> Result<()> {
    let data: Vec<f64> = v.iter().map(|&i| i as f64).collect();
    put_vec(out, name, &data)
}

fn get_vec(s: &Sections, name: &str) -> Result<Vec<f64>> {
    let m = s.get(name)?;
    if m.rows() != 1 {
        return Err(bad(name, format!("expected a row vector, got {}x{}", m.rows(), m.cols())));
    }
    Ok(m.as_slice().to_vec())
}

fn get_scalar(s: &Sections, name: &str) -> Result<f64> {
    match get_vec(s, name)?.as_slice() {
        [v] => Ok(*v),
        v => Err(bad(name, format!("expected a scalar, got {} values", v.len()))),
    }
}

fn to_index(name: &str, v: f64) -> Result<usize> {
    if v.fract() != 0.0 || !(0.0..MAX_INDEX).contains(&v) {
        return Err(bad(name, format!("{v} is not a valid index")));
    }
    Ok(v as usize)
}

fn get_indices(s: &Sections, name: &str) -> Result<Vec<usize>> {
    get_vec(s, name)?.into_iter().map(|v| to_index(name, v)).collect()
}

fn get_count(s: &Sections, name: &str) -> Result<usize> {
    to_index(name, get_scalar(s, name)?)
}

fn get_flag(s: &Sections, name: &str) -> Result<bool> {
    match get_scalar(s, name)? {
        0.0 => Ok(false),
        1.0 => Ok(true),
        v => Err(bad(name, format!("{v} is not a flag"))),
    }
}

fn model_err(name: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Format(_) | Error::Io(_) => e,
        other => bad(name, other),
    }
}

impl Persist for Matrix {
    fn store(&self, prefix: &str, out: &mut Sections) -> Result<()> {
        out.insert(key(prefix, "matrix"), self.clone())
    }

    fn restore(s: &Sections, prefix: &str) -> Result<Self> {
        s.get(&key(prefix, "matrix")).cloned()
    }
}

impl Persist for Mlp {
    /// `dims`, then `w{l}` (`out × in`) and `b{l}` for every layer.
    fn store(&self, prefix: &str, out: &mut Sections) -> Result<()> {
        let dims: Vec<f64> = self.dims().iter().map(|&d| d as f64).collect();
        put_vec(out, key(prefix, "dims"), &dims)?;
        for l in 0..self.num_layers() {
            let (w, b) = self.layer(l);
            let (i, o) = (self.dims()[l], self.dims()[l + 1]);
            out.insert(key(prefix, &format!("w{l}")), Matrix::new(o, i, w.to_vec())?)?;
            put_vec(out, key(prefix, &format!("b{l}")), b)?;
        }
        Ok(())
    }

    fn restore(s: &Sections, prefix: &str) -> Result<Self> {
        let name = key(prefix, "dims");
        let dims = get_indices(s, &name)?;
        if dims.len() < 2 {
            return Err(bad(&name, "need at least two layer widths"));
        }
        let mut params = Vec::new();
        for l in 0..dims.len() - 1 {
            let wn = key(prefix, &format!("w{l}"));
            let w = s.get(&wn)?;
            if w.shape() != (dims[l + 1], dims[l]) {
                return Err(bad(&wn, format!("shape {:?}, expected {:?}", w.shape(), (dims[l + 1], dims[l]))));
            }
            params.extend_from_slice(w.as_slice());
            let bn = key(prefix, &format!("b{l}"));
            let b = get_vec(s, &bn)?;
            if b.len() != dims[l + 1] {
                return Err(bad(&bn, format!("{} biases, expected {}", b.len(), dims[l + 1])));
            }
            params.extend(b);
        }
        Mlp::from_params(&dims, params).map_err(model_err(&name))
    }
}

impl Persist for MlpClassifier {
    fn store(&self, prefix: &str, out: &mut Sections) -> Result<()> {
        self.net().store(prefix, out)
    }

    fn restore(s: &Sections, prefix: &str) -> Result<Self> {
        Ok(MlpClassifier::from_net(Mlp::restore(s, prefix)?))
    }
}

impl Persist for BinaryHead {
    /// Restored heads count as trained.
    fn store(&self, prefix: &str, out: &mut Sections) -> Result<()> {
        self.net().store(prefix, out)
    }

    fn restore(s: &Sections, prefix: &str) -> Result<Self> {
        BinaryHead::from_net(Mlp::restore(s, prefix)?).map_err(model_err(prefix))
    }
}

impl Persist for EnergyHead {
    /// Restored heads count as trained.
    fn store(&self, prefix: &str, out: &mut Sections) -> Result<()> {
        put_vec(out, key(prefix, "log_weights"), self.log_weights())?;
        self.phi().store(&key(prefix, "phi"), out)
    }

    fn restore(s: &Sections, prefix: &str) -> Result<Self> {
        let name = key(prefix, "log_weights");
        let u = get_vec(s, &name)?;
        let phi = Mlp::restore(s, &key(prefix, "phi"))?;
        EnergyHead::from_parts(u, phi).map_err(model_err(&name))
    }
}

impl Persist for VmfMixture {
    /// Prototypes, log-concentrations, `alpha`, `dim` and `fitted`.
    fn store(&self, prefix: &str, out: &mut Sections) -> Result<()> {
        out.insert(key(prefix, "prototypes"), self.prototypes().clone())?;
        put_vec(out, key(prefix, "log_kappa"), self.log_kappas())?;
        put_scalar(out, key(prefix, "alpha"), self.alpha)?;
        put_scalar(out, key(prefix, "dim"), self.dim() as f64)?;
        put_scalar(out, key(prefix, "fitted"), f64::from(u8::from(self.is_fitted())))
    }

    fn restore(s: &Sections, prefix: &str) -> Result<Self> {
        let name = key(prefix, "prototypes");
        let protos = s.get(&name)?.clone();
        let d = get_count(s, &key(prefix, "dim"))?;
        if d != protos.cols() {
            return Err(bad(&name, format!("{} columns, stored dimension {d}", protos.cols())));
        }
        let log_kappas = get_vec(s, &key(prefix, "log_kappa"))?;
        let alpha = get_scalar(s, &key(prefix, "alpha"))?;
        let fitted = get_flag(s, &key(prefix, "fitted"))?;
        VmfMixture::from_raw(protos, log_kappas, alpha, fitted).map_err(model_err(&name))
    }
}

impl Persist for FilterResult {
    /// Per-sample `scores`, `bucket_of` and `candidates`, then for every
    /// bucket `b{i}` its class (`-1` for the global group), reference
    /// gradient, singular vectors, threshold and members.
    fn store(&self, prefix: &str, out: &mut Sections) -> Result<()> {
        put_vec(out, key(prefix, "scores"), &self.scores)?;
        put_indices(out, key(prefix, "bucket_of"), &self.bucket_of)?;
        put_indices(out, key(prefix, "candidates"), &self.candidates)?;
        put_scalar(out, key(prefix, "num_buckets"), self.buckets.len() as f64)?;
        for (i, b) in self.buckets.iter().enumerate() {
            let p = key(prefix, &format!("b{i}"));
            put_scalar(out, key(&p, "class"), b.class.map_or(-1.0, |c| c as f64))?;
            put_vec(out, key(&p, "reference"), &b.reference)?;
            out.insert(key(&p, "vectors"), b.vectors.clone())?;
            put_scalar(out, key(&p, "threshold"), b.threshold)?;
            put_indices(out, key(&p, "members"), &b.members)?;
        }
        Ok(())
    }

    fn restore(s: &Sections, prefix: &str) -> Result<Self> {
        let scores = get_vec(s, &key(prefix, "scores"))?;
        let n = scores.len();
        let bname = key(prefix, "bucket_of");
        let bucket_of = get_indices(s, &bname)?;
        let cname = key(prefix, "candidates");
        let candidates = get_indices(s, &cname)?;
        let nb = get_count(s, &key(prefix, "num_buckets"))?;
        if bucket_of.len() != n || bucket_of.iter().any(|&b| b >= nb) {
            return Err(bad(&bname, "does not match the scores and buckets"));
        }
        if candidates.iter().any(|&c| c >= n) || candidates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(bad(&cname, "must be ascending wild indices"));
        }
        let mut buckets = Vec::with_capacity(nb);
        for i in 0..nb {
            let p = key(prefix, &format!("b{i}"));
            let cn = key(&p, "class");
            let class = match get_scalar(s, &cn)? {
                -1.0 => None,
                v => Some(to_index(&cn, v)?),
            };
            let mn = key(&p, "members");
            let members = get_indices(s, &mn)?;
            if members.iter().any(|&m| m >= n) {
                return Err(bad(&mn, "member index out of range"));
            }
            buckets.push(FilterBucket {
                class,
                reference: get_vec(s, &key(&p, "reference"))?,
                vectors: s.get(&key(&p, "vectors"))?.clone(),
                threshold: get_scalar(s, &key(&p, "threshold"))?,
                members,
            });
        }
        Ok(FilterResult {
            buckets,
            scores,
            bucket_of,
            candidates,
        })
    }
}

impl Persist for SubspaceModel {
    fn store(&self, prefix: &str, out: &mut Sections) -> Result<()> {
        put_vec(out, key(prefix, "center"), &self.center)?;
        out.insert(key(prefix, "vectors"), self.vectors.clone())?;
        put_vec(out, key(prefix, "values"), &self.values)?;
        put_scalar(out, key(prefix, "normalize"), f64::from(u8::from(self.normalize)))
    }

    fn restore(s: &Sections, prefix: &str) -> Result<Self> {
        let center = get_vec(s, &key(prefix, "center"))?;
        let vn = key(prefix, "vectors");
        let vectors = s.get(&vn)?.clone();
        let values = get_vec(s, &key(prefix, "values"))?;
        if vectors.cols() != center.len() || vectors.rows() != values.len() {
            return Err(bad(&vn, "shape does not match the center and singular values"));
        }
        Ok(SubspaceModel {
            center,
            vectors,
            values,
            normalize: get_flag(s, &key(prefix, "normalize"))?,
        })
    }
}

impl Persist for VosModel {
    fn store(&self, prefix: &str, out: &mut Sections) -> Result<()> {
        self.clf.store(&key(prefix, "clf"), out)?;
        self.head.store(&key(prefix, "head"), out)
    }

    fn restore(s: &Sections, prefix: &str) -> Result<Self> {
        Ok(VosModel {
            clf: MlpClassifier::restore(s, &key(prefix, "clf"))?,
            head: EnergyHead::restore(s, &key(prefix, "head"))?,
        })
    }
}

impl Persist for SirenModel {
    fn store(&self, prefix: &str, out: &mut Sections) -> Result<()> {
        self.clf.store(&key(prefix, "clf"), out)?;
        self.projector.store(&key(prefix, "projector"), out)?;
        self.mixture.store(&key(prefix, "mixture"), out)
    }

    fn restore(s: &Sections, prefix: &str) -> Result<Self> {
        Ok(SirenModel {
            clf: MlpClassifier::restore(s, &key(prefix, "clf"))?,
            projector: Mlp::restore(s, &key(prefix, "projector"))?,
            mixture: VmfMixture::restore(s, &key(prefix, "mixture"))?,
        })
    }
}

impl Persist for SalModel {
    fn store(&self, prefix: &str, out: &mut Sections) -> Result<()> {
        self.clf.store(&key(prefix, "clf"), out)?;
        self.filter.store(&key(prefix, "filter"), out)?;
        self.head.store(&key(prefix, "head"), out)
    }

    fn restore(s: &Sections, prefix: &str) -> Result<Self> {
        Ok(SalModel {
            clf: MlpClassifier::restore(s, &key(prefix, "clf"))?,
            filter: FilterResult::restore(s, &key(prefix, "filter"))?,
            head: BinaryHead::restore(s, &key(prefix, "head"))?,
        })
    }
}

impl Persist for HaloModel {
    fn store(&self, prefix: &str, out: &mut Sections) -> Result<()> {
        self.subspace.store(&key(prefix, "subspace"), out)?;
        put_scalar(out, key(prefix, "threshold"), self.threshold)?;
        put_indices(out, key(prefix, "outlying"), &self.split.outlying)?;
        put_indices(out, key(prefix, "inlying"), &self.split.inlying)?;
        self.head.store(&key(prefix, "head"), out)
    }

    fn restore(s: &Sections, prefix: &str) -> Result<Self> {
        Ok(HaloModel {
            subspace: SubspaceModel::restore(s, &key(prefix, "subspace"))?,
            threshold: get_scalar(s, &key(prefix, "threshold"))?,
            split: MembershipSplit {
                outlying: get_indices(s, &key(prefix, "outlying"))?,
                inlying: get_indices(s, &key(prefix, "inlying"))?,
            },
            head: BinaryHead::restore(s, &key(prefix, "head"))?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::container::{read_sections, write_sections};
    use crate::model::PHI_HIDDEN;
    use crate::numerics::RngState;

    fn round_trip<P: Persist + PartialEq + std::fmt::Debug>(v: &P) -> P {
        let s = to_sections(v).unwrap();
        let mut buf = Vec::new();
        write_sections(&mut buf, &s).unwrap();
        let back = P::restore(&read_sections(&mut buf.as_slice()).unwrap(), "").unwrap();
        assert_eq!(&back, v);
        back
    }

    #[test]
    fn mlp_has_one_section_per_tensor() {
        let net = Mlp::new(&[3, 5, 2], &mut RngState::new(1)).unwrap();
        let s = to_sections(&net).unwrap();
        assert_eq!(s.names().collect::<Vec<_>>(), ["dims", "w0", "b0", "w1", "b1"]);
        assert_eq!(s.get("w0").unwrap().shape(), (5, 3));
        assert_eq!(s.get("w0").unwrap().row(1), &net.layer(0).0[3..6]);
        round_trip(&net);
    }

    #[test]
    fn heads_round_trip() {
        let mut rng = RngState::new(2);
        round_trip(&MlpClassifier::new(2, &[4], 3, &mut rng).unwrap());
        let h = EnergyHead::new(3, &PHI_HIDDEN, &mut rng).unwrap();
        let h = EnergyHead::from_parts(vec![0.1, -0.2, 0.3], h.phi().clone()).unwrap();
        round_trip(&h);
        let b = BinaryHead::from_net(Mlp::new(&[2, 3, 1], &mut rng).unwrap()).unwrap();
        round_trip(&b);
    }

    #[test]
    fn mixture_round_trip_is_bit_exact() {
        let protos = Matrix::new(2, 3, vec![1.0, 2.0, 2.0, 0.0, -1.0, 0.3]).unwrap();
        let m = VmfMixture::new(&protos, &[3.7, 0.2], 0.9).unwrap();
        let s = to_sections(&m).unwrap();
        assert_eq!(get_count(&s, "dim").unwrap(), 3);
        round_trip(&m);
        let u = round_trip(&VmfMixture::unfitted(3, 4));
        assert!(!u.is_fitted());
    }

    #[test]
    fn filter_result_round_trip() {
        let f = FilterResult {
            buckets: vec![
                FilterBucket {
                    class: Some(1),
                    reference: vec![0.5, -0.5],
                    vectors: Matrix::new(1, 2, vec![0.6, 0.8]).unwrap(),
                    threshold: 0.25,
                    members: vec![0, 2],
                },
                FilterBucket {
                    class: None,
                    reference: vec![0.0, 1.0],
                    vectors: Matrix::new(1, 2, vec![1.0, 0.0]).unwrap(),
                    threshold: 1.5,
                    members: vec![1],
                },
            ],
            scores: vec![0.1, 2.0, 0.3],
            bucket_of: vec![0, 1, 0],
            candidates: vec![1, 2],
        };
        round_trip(&f);
        let mut s = to_sections(&f).unwrap();
        s = {
            let mut t = Sections::new();
            for (n, m) in s.iter() {
                let m = if n == "candidates" { Matrix::new(1, 2, vec![2.0, 1.0]).unwrap() } else { m.clone() };
                t.insert(n, m).unwrap();
            }
            t
        };
        assert!(matches!(FilterResult::restore(&s, ""), Err(Error::Format(m)) if m.contains("candidates")));
    }

    #[test]
    fn subspace_round_trip() {
        round_trip(&SubspaceModel {
            center: vec![1.0, 2.0, 3.0],
            vectors: Matrix::new(1, 3, vec![0.0, 1.0, 0.0]).unwrap(),
            values: vec![4.0],
            normalize: true,
        });
    }

    #[test]
    fn prefixes_nest() {
        let mut rng = RngState::new(3);
        let m = VosModel {
            clf: MlpClassifier::new(2, &[4], 3, &mut rng).unwrap(),
            head: EnergyHead::from_parts(vec![0.0; 3], Mlp::new(&[1, 4, 1], &mut rng).unwrap()).unwrap(),
        };
        let s = to_sections(&m).unwrap();
        assert!(s.contains("clf.w1") && s.contains("head.phi.b0") && s.contains("head.log_weights"));
        round_trip(&m);
    }

    #[test]
    fn corrupted_sections_are_format_errors() {
        let net = Mlp::new(&[3, 2], &mut RngState::new(4)).unwrap();
        let s = to_sections(&net).unwrap();
        let mut t = Sections::new();
        t.insert("dims", s.get("dims").unwrap().clone()).unwrap();
        t.insert("w0", Matrix::zeros(3, 2)).unwrap();
        t.insert("b0", s.get("b0").unwrap().clone()).unwrap();
        assert!(matches!(Mlp::restore(&t, ""), Err(Error::Format(m)) if m.contains("w0")));
        let mut t = Sections::new();
        t.insert("dims", Matrix::new(1, 2, vec![3.0, 2.5]).unwrap()).unwrap();
        assert!(matches!(Mlp::restore(&t, ""), Err(Error::Format(_))));
        assert!(matches!(Mlp::restore(&Sections::new(), "net"), Err(Error::Format(m)) if m.contains("net.dims")));
    }

    #[test]
    fn save_and_load_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("net.ualk");
        let net = Mlp::new(&[2, 2, 2], &mut RngState::new(5)).unwrap();
        save(&p, &net).unwrap();
        assert_eq!(load::<Mlp>(&p).unwrap(), net);
        assert!(load::<EnergyHead>(&p).is_err());
    }
}
