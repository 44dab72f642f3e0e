//! Sentence-pair instances: `[CLS] x1 [SEP] x2 [SEP]`.
//!
//! Positives are two consecutive segments of one document in their original
//! order. Negatives depend on the objective: SOP swaps the two segments, NSP
//! replaces the second with a segment from a different document.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::corpus::Document;
use super::vocab::{is_special, CLS, SEP};
use crate::error::{Error, Result};
use crate::model::Objective;

pub const SP_POSITIVE: u8 = 0;
pub const SP_NEGATIVE: u8 = 1;

/// Minimum target length drawn by the short-sequence rule.
pub const SHORT_MIN_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentRef {
    pub doc: usize,
    pub segment: usize,
}

/// Where the two packed segments came from, in packed order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Provenance {
    pub first: SegmentRef,
    pub second: SegmentRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingInstance {
    pub token_ids: Vec<usize>,
    pub segment_ids: Vec<u8>,
    /// `true` for real tokens. Instances are unpadded until batched.
    #[serde(skip)]
    pub padding_mask: Vec<bool>,
    pub masked_positions: Vec<usize>,
    pub masked_targets: Vec<usize>,
    pub sp_label: Option<u8>,
    #[serde(skip)]
    pub provenance: Option<Provenance>,
    /// Set when the short-sequence rule picked a reduced target length.
    #[serde(skip)]
    pub shortened: bool,
}

impl TrainingInstance {
    pub fn pack(first: &[usize], second: &[usize], sp_label: Option<u8>) -> Self {
        let len = first.len() + second.len() + 3;
        let mut token_ids = Vec::with_capacity(len);
        token_ids.push(CLS);
        token_ids.extend_from_slice(first);
        token_ids.push(SEP);
        let split = token_ids.len();
        token_ids.extend_from_slice(second);
        token_ids.push(SEP);
        let segment_ids = (0..len).map(|i| u8::from(i >= split)).collect();
        Self {
            token_ids,
            segment_ids,
            padding_mask: vec![true; len],
            masked_positions: Vec::new(),
            masked_targets: Vec::new(),
            sp_label,
            provenance: None,
            shortened: false,
        }
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Token ids with masking undone.
    pub fn original_tokens(&self) -> Vec<usize> {
        let mut t = self.token_ids.clone();
        for (&p, &orig) in self.masked_positions.iter().zip(&self.masked_targets) {
            t[p] = orig;
        }
        t
    }

    /// The two segments' original tokens, split at the first `[SEP]`.
    pub fn segments(&self) -> (Vec<usize>, Vec<usize>) {
        let t = self.original_tokens();
        let real = self.padding_mask.iter().filter(|&&m| m).count().max(1);
        let t = &t[..real.min(t.len())];
        let first_sep = t.iter().position(|&x| x == SEP).unwrap_or(t.len());
        let a = t[1.min(first_sep)..first_sep].to_vec();
        let b = t
            .get(first_sep + 1..t.len().saturating_sub(1))
            .unwrap_or(&[])
            .to_vec();
        (a, b)
    }
}

/// Keeps at most `budget` tokens, trimming the longer segment's tail first.
pub fn truncate_pair(a: &mut Vec<usize>, b: &mut Vec<usize>, budget: usize) {
    while a.len() + b.len() > budget {
        if a.len() >= b.len() {
            a.pop();
        } else {
            b.pop();
        }
    }
}

/// Draws sentence-pair instances from a tokenized corpus.
pub struct PairSampler<'a> {
    docs: &'a [Document],
    /// Documents with at least two segments.
    eligible: Vec<usize>,
    pub max_len: usize,
    pub short_prob: f64,
}

impl<'a> PairSampler<'a> {
    pub fn new(docs: &'a [Document], max_len: usize, short_prob: f64) -> Result<Self> {
        if max_len < 5 {
            return Err(Error::Config(format!(
                "max_len {max_len} cannot hold [CLS] x1 [SEP] x2 [SEP]"
            )));
        }
        if !(0.0..=1.0).contains(&short_prob) {
            return Err(Error::Config(format!("short_prob {short_prob} outside [0, 1]")));
        }
        let eligible = (0..docs.len())
            .filter(|&i| docs[i].segments.len() >= 2)
            .collect();
        Ok(Self {
            docs,
            eligible,
            max_len,
            short_prob,
        })
    }

    pub fn docs(&self) -> &'a [Document] {
        self.docs
    }

    pub fn check_objective(&self, objective: Objective) -> Result<()> {
        if self.eligible.is_empty() {
            return Err(Error::Data(
                "corpus has no document with at least two segments".into(),
            ));
        }
        if objective == Objective::MlmNsp && self.docs.len() < 2 {
            return Err(Error::Data(
                "NSP negatives need at least two documents".into(),
            ));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(
        &self,
        objective: Objective,
        rng: &mut R,
    ) -> Result<TrainingInstance> {
        self.check_objective(objective)?;
        let doc = self.eligible[rng.random_range(0..self.eligible.len())];
        let n_seg = self.docs[doc].segments.len();
        let seg = rng.random_range(0..n_seg - 1);
        let mut first = SegmentRef { doc, segment: seg };
        let mut second = SegmentRef {
            doc,
            segment: seg + 1,
        };

        let label = if objective.has_sentence_pair() {
            Some(if rng.random_bool(0.5) {
                SP_POSITIVE
            } else {
                SP_NEGATIVE
            })
        } else {
            None
        };
        if objective == Objective::MlmNsp && label == Some(SP_NEGATIVE) {
            let mut other = rng.random_range(0..self.docs.len() - 1);
            if other >= doc {
                other += 1;
            }
            let other_seg = rng.random_range(0..self.docs[other].segments.len());
            second = SegmentRef {
                doc: other,
                segment: other_seg,
            };
        }

        let mut target = self.max_len;
        let mut shortened = false;
        if rng.random::<f64>() < self.short_prob {
            let hi = self.max_len - 1;
            target = rng.random_range(SHORT_MIN_LEN.min(hi)..=hi);
            shortened = true;
        }
        let seg_of = |r: SegmentRef| self.docs[r.doc].segments[r.segment].clone();
        let (mut a, mut b) = (seg_of(first), seg_of(second));
        // truncate before any swap so an SOP negative holds exactly the
        // tokens of its positive
        truncate_pair(&mut a, &mut b, target - 3);
        if objective == Objective::MlmSop && label == Some(SP_NEGATIVE) {
            std::mem::swap(&mut a, &mut b);
            std::mem::swap(&mut first, &mut second);
        }
        let mut inst = TrainingInstance::pack(&a, &b, label);
        inst.provenance = Some(Provenance { first, second });
        inst.shortened = shortened;
        Ok(inst)
    }
}

pub fn make_sentence_pair_instance<R: Rng + ?Sized>(
    docs: &[Document],
    objective: Objective,
    max_len: usize,
    short_prob: f64,
    rng: &mut R,
) -> Result<TrainingInstance> {
    PairSampler::new(docs, max_len, short_prob)?.sample(objective, rng)
}

/// Checks the structural invariants of an instance, and its provenance
/// against `docs` when present.
pub fn validate_instance(
    inst: &TrainingInstance,
    docs: &[Document],
    objective: Objective,
    max_len: usize,
) -> Result<()> {
    let bad = |m: String| Err(Error::Data(m));
    let n = inst.len();
    if n > max_len {
        return bad(format!("length {n} exceeds max_len {max_len}"));
    }
    if inst.segment_ids.len() != n || inst.padding_mask.len() != n {
        return bad("segment_ids / padding_mask length mismatch".into());
    }
    let orig = inst.original_tokens();
    let real = inst.padding_mask.iter().filter(|&&m| m).count();
    if orig.first() != Some(&CLS) {
        return bad("first token is not [CLS]".into());
    }
    let seps: Vec<usize> = (0..real).filter(|&i| orig[i] == SEP).collect();
    if seps.len() != 2 || seps[1] != real - 1 {
        return bad(format!("expected exactly two [SEP], found at {seps:?}"));
    }
    for i in 0..real {
        let expect = u8::from(i > seps[0]);
        if inst.segment_ids[i] != expect {
            return bad(format!("segment id at {i} is {}", inst.segment_ids[i]));
        }
    }
    if inst.masked_positions.len() != inst.masked_targets.len() {
        return bad("masked positions/targets length mismatch".into());
    }
    for (&p, &t) in inst.masked_positions.iter().zip(&inst.masked_targets) {
        if p >= n || !inst.padding_mask[p] || is_special(t) {
            return bad(format!("masked position {p} indexes a special or padding"));
        }
    }
    if objective.has_sentence_pair() != inst.sp_label.is_some() {
        return bad("sp_label presence does not match objective".into());
    }

    let Some(prov) = inst.provenance else {
        return Ok(());
    };
    let (a, b) = inst.segments();
    for (tokens, r) in [(&a, prov.first), (&b, prov.second)] {
        let src = &docs[r.doc].segments[r.segment];
        if !src.starts_with(tokens) {
            return bad(format!(
                "segment tokens are not a prefix of doc {} segment {}",
                r.doc, r.segment
            ));
        }
    }
    let (f, s) = (prov.first, prov.second);
    let in_order = f.doc == s.doc && s.segment == f.segment + 1;
    let swapped = f.doc == s.doc && f.segment == s.segment + 1;
    match (objective, inst.sp_label) {
        (Objective::MlmOnly, _) | (_, Some(SP_POSITIVE)) if !in_order => {
            bad("positive pair is not consecutive in-order segments".into())
        }
        (Objective::MlmSop, Some(SP_NEGATIVE)) if !swapped => {
            bad("SOP negative is not an order swap".into())
        }
        (Objective::MlmNsp, Some(SP_NEGATIVE)) if f.doc == s.doc => {
            bad("NSP negative does not cross documents".into())
        }
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn corpus() -> Vec<Document> {
        (0..4)
            .map(|d| Document {
                segments: (0..3)
                    .map(|s| (0..6).map(|t| 5 + d * 100 + s * 10 + t).collect())
                    .collect(),
            })
            .collect()
    }

    #[test]
    fn sop_negative_swaps_order() {
        let docs = vec![Document {
            segments: vec![vec![10, 11], vec![20, 21, 22]],
        }];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sampler = PairSampler::new(&docs, 32, 0.0).unwrap();
        let mut seen = [false; 2];
        for _ in 0..50 {
            let inst = sampler.sample(Objective::MlmSop, &mut rng).unwrap();
            let label = inst.sp_label.unwrap();
            seen[label as usize] = true;
            if label == SP_NEGATIVE {
                assert_eq!(inst.token_ids, vec![CLS, 20, 21, 22, SEP, 10, 11, SEP]);
                assert_eq!(inst.segment_ids, vec![0, 0, 0, 0, 0, 1, 1, 1]);
            } else {
                assert_eq!(inst.token_ids, vec![CLS, 10, 11, SEP, 20, 21, 22, SEP]);
            }
            validate_instance(&inst, &docs, Objective::MlmSop, 32).unwrap();
        }
        assert_eq!(seen, [true, true]);
    }

    #[test]
    fn nsp_negative_crosses_documents() {
        let docs = corpus();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sampler = PairSampler::new(&docs, 32, 0.0).unwrap();
        for _ in 0..200 {
            let inst = sampler.sample(Objective::MlmNsp, &mut rng).unwrap();
            let prov = inst.provenance.unwrap();
            if inst.sp_label == Some(SP_NEGATIVE) {
                assert_ne!(prov.first.doc, prov.second.doc);
            }
            validate_instance(&inst, &docs, Objective::MlmNsp, 32).unwrap();
        }
    }

    #[test]
    fn insufficient_corpus_errors() {
        let single = vec![Document {
            segments: vec![vec![7]],
        }];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(make_sentence_pair_instance(&single, Objective::MlmSop, 16, 0.0, &mut rng).is_err());
        let one_doc = vec![Document {
            segments: vec![vec![7], vec![8]],
        }];
        assert!(make_sentence_pair_instance(&one_doc, Objective::MlmNsp, 16, 0.0, &mut rng).is_err());
        assert!(make_sentence_pair_instance(&one_doc, Objective::MlmSop, 16, 0.0, &mut rng).is_ok());
    }

    #[test]
    fn truncation_and_short_rule() {
        let docs = vec![Document {
            segments: vec![(5..45).collect(), (50..90).collect()],
        }];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sampler = PairSampler::new(&docs, 32, 1.0).unwrap();
        for _ in 0..100 {
            let inst = sampler.sample(Objective::MlmOnly, &mut rng).unwrap();
            assert!(inst.shortened);
            assert!((SHORT_MIN_LEN..32).contains(&inst.len()), "{}", inst.len());
            assert!(inst.sp_label.is_none());
            validate_instance(&inst, &docs, Objective::MlmOnly, 32).unwrap();
        }
        let full = PairSampler::new(&docs, 32, 0.0).unwrap();
        assert_eq!(full.sample(Objective::MlmOnly, &mut rng).unwrap().len(), 32);
    }

    #[test]
    fn truncate_longer_first() {
        let (mut a, mut b) = (vec![1; 10], vec![2; 4]);
        truncate_pair(&mut a, &mut b, 8);
        assert_eq!((a.len(), b.len()), (4, 4));
    }
}
