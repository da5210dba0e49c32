//! `STF1` tensor container: magic, u32 entry count, then per entry a u16
//! name length, UTF-8 name, u8 dtype (0 = f32, 1 = f64, 2 = u8), u8 rank,
//! u32 extents and a row-major little-endian payload.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::init::InitMethod;
use crate::model::{build_model, Model, ModelSpec};
use crate::rng::Rng;
use crate::snip::{Criterion, ParamScores, PruneResult, SaliencyReport, Selection};
use crate::tensor::{DType, Real, Tensor};

pub const MAGIC: &[u8; 4] = b"STF1";

#[derive(Debug, Clone, PartialEq)]
pub enum EntryData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
}

impl EntryData {
    fn code(&self) -> u8 {
        match self {
            EntryData::F32(_) => 0,
            EntryData::F64(_) => 1,
            EntryData::U8(_) => 2,
        }
    }

    fn len(&self) -> usize {
        match self {
            EntryData::F32(v) => v.len(),
            EntryData::F64(v) => v.len(),
            EntryData::U8(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: EntryData,
}

impl Entry {
    pub fn tensor<T: Real>(name: &str, t: &Tensor<T>) -> Self {
        let data = match T::DTYPE {
            DType::F32 => EntryData::F32(t.data().iter().map(|v| v.as_f64() as f32).collect()),
            DType::F64 => EntryData::F64(t.data().iter().map(|v| v.as_f64()).collect()),
        };
        Entry { name: name.into(), shape: t.shape().to_vec(), data }
    }

    pub fn bytes(name: &str, shape: &[usize], bytes: Vec<u8>) -> Self {
        Entry { name: name.into(), shape: shape.to_vec(), data: EntryData::U8(bytes) }
    }

    pub fn text(name: &str, text: &str) -> Self {
        Self::bytes(name, &[text.len().max(1)], if text.is_empty() { vec![b'\n'] } else { text.as_bytes().to_vec() })
    }

    /// Converts a float entry to `T`; u8 entries are rejected.
    pub fn to_tensor<T: Real>(&self) -> Result<Tensor<T>> {
        let vals: Vec<T> = match &self.data {
            EntryData::F32(v) => v.iter().map(|&x| T::of_f64(x as f64)).collect(),
            EntryData::F64(v) => v.iter().map(|&x| T::of_f64(x)).collect(),
            EntryData::U8(_) => return Err(Error::Format(format!("entry `{}` is not a float tensor", self.name))),
        };
        Tensor::new(&self.shape, vals).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn as_bytes(&self) -> Result<&[u8]> {
        match &self.data {
            EntryData::U8(b) => Ok(b),
            _ => Err(Error::Format(format!("entry `{}` is not a byte tensor", self.name))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<Entry>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    fn require(&self, name: &str) -> Result<&Entry> {
        self.get(name).ok_or_else(|| Error::Format(format!("checkpoint has no entry `{name}`")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&u32::try_from(self.entries.len()).map_err(|_| Error::Format("too many entries".into()))?.to_le_bytes());
        for e in &self.entries {
            let name = e.name.as_bytes();
            let name_len = u16::try_from(name.len()).map_err(|_| Error::Format(format!("name `{}` too long", e.name)))?;
            let rank = u8::try_from(e.shape.len()).map_err(|_| Error::Format("rank above 255".into()))?;
            if e.shape.iter().product::<usize>() != e.data.len() {
                return Err(Error::Format(format!("entry `{}` shape {:?} does not match {} values", e.name, e.shape, e.data.len())));
            }
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name);
            out.push(e.data.code());
            out.push(rank);
            for &d in &e.shape {
                out.extend_from_slice(&u32::try_from(d).map_err(|_| Error::Format("extent above u32".into()))?.to_le_bytes());
            }
            match &e.data {
                EntryData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                EntryData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                EntryData::U8(v) => out.extend_from_slice(v),
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("missing STF1 magic".into()));
        }
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Format("entry name is not UTF-8".into()))?
                .to_string();
            let code = r.u8()?;
            let rank = r.u8()? as usize;
            let shape: Vec<usize> = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_>>()?;
            let n: usize = shape.iter().product();
            let data = match code {
                0 => EntryData::F32(r.take(n * 4)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
                1 => EntryData::F64(r.take(n * 8)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()),
                2 => EntryData::U8(r.take(n)?.to_vec()),
                c => return Err(Error::Format(format!("unknown dtype code {c} for `{name}`"))),
            };
            entries.push(Entry { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint { entries })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Data(format!("checkpoint {} not found", path.display())),
            _ => Error::Io(e),
        })?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

fn meta_text(pairs: &[(&str, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

fn parse_meta(e: &Entry) -> Result<Vec<(String, String)>> {
    let text = std::str::from_utf8(e.as_bytes()?).map_err(|_| Error::Format("metadata is not UTF-8".into()))?;
    Ok(text
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect())
}

fn meta_get<'a>(meta: &'a [(String, String)], key: &str) -> Result<&'a str> {
    meta.iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| Error::Format(format!("metadata lacks `{key}`")))
}

fn parse_field<X: std::str::FromStr>(meta: &[(String, String)], key: &str) -> Result<X> {
    meta_get(meta, key)?.parse().map_err(|_| Error::Format(format!("bad metadata value for `{key}`")))
}

/// Weights as float entries, masks of prunable parameters as `<name>.mask`
/// u8 entries, and a `meta` text entry.
pub fn model_to_checkpoint<T: Real>(model: &Model<T>) -> Checkpoint {
    let mut entries = vec![Entry::text(
        "meta",
        &meta_text(&[
            ("model", model.spec.name().to_string()),
            ("init", model.init.to_string()),
            ("steps", model.steps.to_string()),
        ]),
    )];
    for p in &model.params {
        entries.push(Entry::tensor(&p.name, &p.value));
        if p.prunable {
            let bytes = p.mask.data().iter().map(|&c| u8::from(c != T::zero())).collect();
            entries.push(Entry::bytes(&format!("{}.mask", p.name), p.mask.shape(), bytes));
        }
    }
    Checkpoint { entries }
}

/// Rebuilds a zoo model from a checkpoint written by [`model_to_checkpoint`].
pub fn model_from_checkpoint<T: Real>(ck: &Checkpoint) -> Result<Model<T>> {
    let meta = parse_meta(ck.require("meta")?)?;
    let spec = ModelSpec::by_name(meta_get(&meta, "model")?)?;
    let init: InitMethod = meta_get(&meta, "init")?.parse()?;
    let mut model: Model<T> = build_model(&spec, init, &Rng::new(0))?;
    model.steps = parse_field(&meta, "steps")?;
    for p in &mut model.params {
        let value = ck.require(&p.name)?.to_tensor::<T>()?;
        if value.shape() != p.value.shape() {
            return Err(Error::Format(format!("`{}` has shape {:?}, expected {:?}", p.name, value.shape(), p.value.shape())));
        }
        p.value = value;
        if p.prunable {
            let e = ck.require(&format!("{}.mask", p.name))?;
            let bytes = e.as_bytes()?;
            if e.shape != p.value.shape() || bytes.iter().any(|&b| b > 1) {
                return Err(Error::Format(format!("mask of `{}` is malformed", p.name)));
            }
            p.mask = Tensor::new(&e.shape, bytes.iter().map(|&b| if b == 1 { T::one() } else { T::zero() }).collect())?;
            if p.value.data().iter().zip(p.mask.data()).any(|(&w, &c)| c == T::zero() && w != T::zero()) {
                return Err(Error::Format(format!("`{}` has weight outside its mask", p.name)));
            }
        }
    }
    Ok(model)
}

/// Saliency scores as `<name>.saliency` f64 entries plus a `meta` entry.
pub fn report_to_checkpoint(report: &SaliencyReport) -> Checkpoint {
    let mut meta = vec![
        ("criterion", report.criterion.to_string()),
        ("batch_size", report.batch_size.to_string()),
        ("seed", report.seed.to_string()),
    ];
    if let Some(sel) = report.selection {
        meta.push(("kappa", sel.kappa.to_string()));
        meta.push(("kappa_bar", format!("{}", sel.kappa_bar)));
        meta.push(("threshold", format!("{:e}", sel.threshold)));
    }
    let mut entries = vec![Entry::text("meta", &meta_text(&meta))];
    for s in &report.scores {
        entries.push(Entry { name: format!("{}.saliency", s.name), shape: s.shape.clone(), data: EntryData::F64(s.values.clone()) });
    }
    Checkpoint { entries }
}

pub fn report_from_checkpoint(ck: &Checkpoint) -> Result<SaliencyReport> {
    let meta = parse_meta(ck.require("meta")?)?;
    let criterion: Criterion = meta_get(&meta, "criterion")?.parse()?;
    let selection = match meta_get(&meta, "kappa") {
        Ok(_) => Some(Selection {
            kappa: parse_field(&meta, "kappa")?,
            kappa_bar: parse_field(&meta, "kappa_bar")?,
            threshold: parse_field(&meta, "threshold")?,
        }),
        Err(_) => None,
    };
    let mut scores = Vec::new();
    for e in ck.entries.iter().filter(|e| e.name.ends_with(".saliency")) {
        let EntryData::F64(values) = &e.data else {
            return Err(Error::Format(format!("`{}` must be f64", e.name)));
        };
        scores.push(ParamScores { name: e.name.trim_end_matches(".saliency").to_string(), shape: e.shape.clone(), values: values.clone() });
    }
    Ok(SaliencyReport {
        criterion,
        scores,
        batch_size: parse_field(&meta, "batch_size")?,
        seed: parse_field(&meta, "seed")?,
        selection,
    })
}

/// Per-layer retained counts as CSV.
pub fn prune_summary_csv(result: &PruneResult) -> String {
    let mut s = String::from("layer,retained,total,density\n");
    for (name, kept, total) in result.per_layer() {
        s.push_str(&format!("{name},{kept},{total},{:.6}\n", kept as f64 / total as f64));
    }
    let (kept, total) = (result.retained(), result.len());
    s.push_str(&format!("all,{kept},{total},{:.6}\n", kept as f64 / total.max(1) as f64));
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::snip::top_kappa_mask;

    #[test]
    fn byte_layout_of_a_single_entry() {
        let ck = Checkpoint { entries: vec![Entry::bytes("m", &[2], vec![1, 0])] };
        let b = ck.to_bytes().unwrap();
        assert_eq!(b, [b"STF1".as_slice(), &[1, 0, 0, 0], &[1, 0], b"m", &[2, 1], &[2, 0, 0, 0], &[1, 0]].concat());
    }

    #[test]
    fn bitwise_round_trip_all_dtypes() {
        let ck = Checkpoint {
            entries: vec![
                Entry { name: "a".into(), shape: vec![3], data: EntryData::F32(vec![1.5, -0.0, f32::MIN_POSITIVE]) },
                Entry { name: "b".into(), shape: vec![1, 2], data: EntryData::F64(vec![std::f64::consts::PI, -1e-300]) },
                Entry::bytes("c", &[2, 2], vec![0, 1, 2, 255]),
            ],
        };
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes().unwrap(), bytes);
        let EntryData::F32(v) = &back.entries[0].data else { panic!() };
        assert_eq!(v[1].to_bits(), (-0.0f32).to_bits());
    }

    #[test]
    fn malformed_inputs() {
        assert!(matches!(Checkpoint::from_bytes(b"STF2\0\0\0\0"), Err(Error::Format(_))));
        let good = Checkpoint { entries: vec![Entry::bytes("m", &[4], vec![1; 4])] }.to_bytes().unwrap();
        assert!(matches!(Checkpoint::from_bytes(&good[..good.len() - 1]), Err(Error::Format(_))));
        let mut long = good.clone();
        long.push(0);
        assert!(matches!(Checkpoint::from_bytes(&long), Err(Error::Format(_))));
        let mut bad_code = good;
        bad_code[4 + 4 + 2 + 1] = 9;
        assert!(matches!(Checkpoint::from_bytes(&bad_code), Err(Error::Format(_))));
    }

    #[test]
    fn pruned_model_round_trip() {
        let mut model: Model<f32> = build_model(&ModelSpec::lenet300(), InitMethod::VarianceScalingXavier, &Rng::new(3)).unwrap();
        let mut rep = crate::snip::baseline_saliency(&model, Criterion::Magnitude, None, &mut Rng::new(0)).unwrap();
        let result = top_kappa_mask(&mut rep, 1234).unwrap();
        crate::snip::apply_masks(&mut model, &result).unwrap();
        let ck = model_to_checkpoint(&model);
        let back: Model<f32> = model_from_checkpoint(&Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap()).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.retained_count(), 1234);

        let rback = report_from_checkpoint(&Checkpoint::from_bytes(&report_to_checkpoint(&rep).to_bytes().unwrap()).unwrap()).unwrap();
        assert_eq!(rback, rep);
    }
}
