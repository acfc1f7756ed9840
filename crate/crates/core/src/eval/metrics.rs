use serde::{Deserialize, Serialize};

use super::claims::{ClaimOracle, ClaimOrigin};
use super::{EvalError, QaItem};

/// Percentages in [0, 100]. Faithfulness, hallucination and self-knowledge
/// partition the response claims.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalScores {
    pub cr: f64,
    pub cp: f64,
    pub hallu: f64,
    pub faith: f64,
    pub self_knowledge: f64,
}

impl EvalScores {
    /// Equal-weight mean with hallucination inverted; higher is better.
    pub fn composite(&self) -> f64 {
        (self.cr + self.cp + (100.0 - self.hallu) + self.faith) / 4.0
    }

    pub fn mean(all: &[EvalScores]) -> EvalScores {
        if all.is_empty() {
            return EvalScores::default();
        }
        let n = all.len() as f64;
        let sum = |f: fn(&EvalScores) -> f64| all.iter().map(f).sum::<f64>() / n;
        EvalScores {
            cr: sum(|s| s.cr),
            cp: sum(|s| s.cp),
            hallu: sum(|s| s.hallu),
            faith: sum(|s| s.faith),
            self_knowledge: sum(|s| s.self_knowledge),
        }
    }

    /// Rounded to two decimals, as reported.
    pub fn rounded(&self) -> EvalScores {
        EvalScores {
            cr: round2(self.cr),
            cp: round2(self.cp),
            hallu: round2(self.hallu),
            faith: round2(self.faith),
            self_knowledge: round2(self.self_knowledge),
        }
    }
}

pub fn round2(x: f64) -> f64 {
    let r = (x * 100.0).round() / 100.0;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// Scores for one QA item plus claim counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemScore {
    pub scores: EvalScores,
    pub gt_claims: usize,
    pub response_claims: usize,
    /// No response claims: faith = hallu = 0, self_knowledge = 100.
    pub empty_response: bool,
}

fn pct(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

/// Score one response against its ground truth and retrieved chunks.
pub fn score(
    qa: &QaItem,
    retrieved: &[&str],
    response: &str,
    oracle: &dyn ClaimOracle,
) -> Result<ItemScore, EvalError> {
    let gt = oracle.extract(&qa.ground_truth, ClaimOrigin::GroundTruth)?;
    if gt.is_empty() {
        return Err(EvalError::EmptyGroundTruth(qa.query.clone()));
    }
    let resp = if response.trim().is_empty() {
        Vec::new()
    } else {
        oracle.extract(response, ClaimOrigin::Response)?
    };

    let mut recalled = 0;
    for g in &gt {
        if oracle.entails(retrieved, g)? {
            recalled += 1;
        }
    }
    let mut relevant = 0;
    for c in retrieved {
        for g in &gt {
            if oracle.entails(&[c], g)? {
                relevant += 1;
                break;
            }
        }
    }

    let truth = [qa.ground_truth.as_str()];
    let (mut faithful, mut hallucinated, mut known) = (0, 0, 0);
    for r in &resp {
        if oracle.entails(retrieved, r)? {
            faithful += 1;
        } else if oracle.entails(&truth, r)? {
            known += 1;
        } else {
            hallucinated += 1;
        }
    }

    let empty_response = resp.is_empty();
    let scores = EvalScores {
        cr: pct(recalled, gt.len()),
        cp: pct(relevant, retrieved.len()),
        faith: pct(faithful, resp.len()),
        hallu: pct(hallucinated, resp.len()),
        self_knowledge: if empty_response { 100.0 } else { pct(known, resp.len()) },
    };
    Ok(ItemScore {
        scores,
        gt_claims: gt.len(),
        response_claims: resp.len(),
        empty_response,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::RuleOracle;

    fn qa(gt: &str) -> QaItem {
        QaItem::new("q?", gt)
    }

    #[test]
    fn recall_three_of_four() {
        let q = qa("Close the inlet valve first. Drain the pump housing. Replace the gasket ring. Refill with coolant.");
        let ctx = ["Close the inlet valve first. Then drain the pump housing.", "Replace the gasket ring now."];
        let s = score(&q, &ctx, "", &RuleOracle).unwrap();
        assert_eq!(s.scores.cr, 75.0);
        assert_eq!(s.scores.cp, 100.0);
        assert!(s.empty_response);
        assert_eq!((s.scores.faith, s.scores.hallu, s.scores.self_knowledge), (0.0, 0.0, 100.0));
    }

    #[test]
    fn perfect_case() {
        let gt = "Tighten to 40 Nm. Wear safety gloves.";
        let s = score(&qa(gt), &[gt, "unrelated filler text here"], gt, &RuleOracle).unwrap();
        assert_eq!(s.scores.cr, 100.0);
        assert_eq!(s.scores.faith, 100.0);
        assert_eq!(s.scores.hallu, 0.0);
        assert_eq!(s.scores.cp, 50.0);
    }

    #[test]
    fn two_claim_partition() {
        // claim 1 is in the context; claim 2 is in neither context nor GT
        let q = qa("Tighten to 40 Nm.");
        let s = score(
            &q,
            &["Tighten to 40 Nm before sealing."],
            "Tighten to 40 Nm. Paint the housing blue.",
            &RuleOracle,
        )
        .unwrap();
        assert_eq!(s.response_claims, 2);
        assert_eq!((s.scores.faith, s.scores.hallu, s.scores.self_knowledge), (50.0, 50.0, 0.0));
    }

    #[test]
    fn self_knowledge_counts_gt_only_claims() {
        let q = qa("Tighten to 40 Nm.");
        let s = score(&q, &["nothing relevant at all"], "Tighten to 40 Nm.", &RuleOracle).unwrap();
        assert_eq!((s.scores.faith, s.scores.hallu, s.scores.self_knowledge), (0.0, 0.0, 100.0));
        assert_eq!(s.scores.cp, 0.0);
        let s = score(&q, &[], "x", &RuleOracle).unwrap();
        assert_eq!(s.scores.cp, 0.0);
    }

    #[test]
    fn empty_ground_truth_is_an_error() {
        assert!(matches!(score(&qa("Ok."), &[], "x", &RuleOracle), Err(EvalError::EmptyGroundTruth(_))));
    }

    #[test]
    fn composite_and_rounding() {
        let s = EvalScores {
            cr: 80.0,
            cp: 60.0,
            hallu: 20.0,
            faith: 40.0,
            self_knowledge: 40.0,
        };
        assert_eq!(s.composite(), 65.0);
        assert_eq!(round2(93.054999), 93.05);
        assert_eq!(round2(-0.001), 0.0);
        let m = EvalScores::mean(&[s, EvalScores::default()]);
        assert_eq!(m.cr, 40.0);
    }
}
