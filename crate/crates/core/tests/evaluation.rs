//! Evaluation arithmetic on hand-built reports, and structural properties
//! of the greedy matcher.

use std::collections::BTreeSet;

use arcmem_core::evaluation::{
    compute_report, match_by_scores, ArcMatching, GoldArc, GoldStandard, MappingOverride,
    MatchedPair,
};
use arcmem_core::{ArcId, ArcType, Character, CharacterId, NarrativeArc, SeriesId};
use proptest::prelude::*;

fn series() -> SeriesId {
    "eval-show".parse().unwrap()
}

fn arc(i: usize, arc_type: ArcType) -> NarrativeArc {
    NarrativeArc {
        arc_id: ArcId::from_raw(format!("arc-{i:03}")),
        series: series(),
        title: format!("Arc {i}"),
        description: "d".into(),
        arc_type,
        main_characters: vec![],
        progressions: vec![],
    }
}

fn gold(types: &[ArcType], characters: &[String]) -> GoldStandard {
    GoldStandard {
        series: series(),
        season: 1,
        gold_arcs: types
            .iter()
            .enumerate()
            .map(|(i, t)| GoldArc {
                title: format!("Gold {i}"),
                arc_type: *t,
                episodes: vec![],
                main_characters: vec![],
            })
            .collect(),
        gold_characters: characters.to_vec(),
        mapping_overrides: vec![],
    }
}

#[test]
fn twenty_eight_extracted_twenty_five_correct() {
    // 28 Soap arcs; the first 25 match a Soap gold arc, 2 match a gold arc
    // of another type, 1 matches nothing.
    let extracted: Vec<NarrativeArc> = (0..28).map(|i| arc(i, ArcType::Soap)).collect();
    let mut types = vec![ArcType::Soap; 25];
    types.extend([ArcType::Anthology, ArcType::GenreSpecific, ArcType::Soap]);
    let g = gold(&types, &[]);
    let matching = ArcMatching {
        pairs: (0..27)
            .map(|i| MatchedPair {
                arc_id: extracted[i].arc_id.clone(),
                gold_index: i,
                score: None,
            })
            .collect(),
        duplicates: vec![],
    };
    let report = compute_report(&matching, &extracted, &g, &[]);
    assert_eq!((report.overall.extracted, report.overall.correct), (28, 25));
    let p = report.overall.precision.unwrap();
    assert_eq!(p, 25.0 / 28.0);
    assert_eq!(format!("{p:.3}"), "0.893");
    assert_eq!(report.per_type["Soap"].precision, Some(25.0 / 28.0));
    assert_eq!(report.per_type["Anthology"].precision, None);
    assert_eq!(report.matched, 27);
    assert_eq!(report.unmatched_extracted, 1);
    assert_eq!(report.missed_gold.len(), 1);
    assert_eq!(report.missed_gold[0].gold_index, 27);
}

#[test]
fn sixty_two_characters_sixty_one_correct() {
    let names: Vec<String> = (0..62).map(|i| format!("Person {i}")).collect();
    let g = gold(&[], &names[..61]);
    let chars: Vec<Character> = names
        .iter()
        .map(|n| {
            // Case and spacing differences still count as a match.
            let shown = n.to_uppercase().replace(' ', "  ");
            Character::new(CharacterId::derive(&series(), n).unwrap(), series(), shown, [])
        })
        .collect();
    let report = compute_report(&ArcMatching::default(), &[], &g, &chars);
    assert_eq!((report.characters.extracted, report.characters.correct), (62, 61));
    assert_eq!(report.characters.accuracy, Some(61.0 / 62.0));
    assert_eq!(format!("{:.3}", report.characters.accuracy.unwrap()), "0.984");
}

#[test]
fn a_gold_name_is_claimed_once() {
    let g = gold(&[], &["Frost".to_string()]);
    let chars = vec![
        Character::new(CharacterId::from_raw("chr-a"), series(), "Frost", []),
        Character::new(CharacterId::from_raw("chr-b"), series(), "Jerry Frost", ["Frost".to_string()]),
    ];
    let report = compute_report(&ArcMatching::default(), &[], &g, &chars);
    assert_eq!(report.characters.correct, 1);
}

fn score_matrix() -> impl Strategy<Value = (Vec<Vec<f64>>, usize)> {
    (1usize..8, 1usize..8).prop_flat_map(|(n, m)| {
        (
            proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, m), n),
            Just(m),
        )
    })
}

proptest! {
    #[test]
    fn greedy_matching_is_one_to_one_and_maximal((scores, m) in score_matrix(), theta in 0.0f64..1.0) {
        let ids: Vec<ArcId> = (0..scores.len()).map(|i| ArcId::from_raw(format!("arc-{i}"))).collect();
        let r = match_by_scores(&ids, &scores, m, &[], theta).unwrap();
        let arcs: BTreeSet<&ArcId> = r.pairs.iter().map(|p| &p.arc_id).collect();
        let golds: BTreeSet<usize> = r.pairs.iter().map(|p| p.gold_index).collect();
        prop_assert_eq!(arcs.len(), r.pairs.len());
        prop_assert_eq!(golds.len(), r.pairs.len());
        for p in &r.pairs {
            let i = ids.iter().position(|a| a == &p.arc_id).unwrap();
            prop_assert!(scores[i][p.gold_index] >= theta);
            prop_assert_eq!(p.score, Some(scores[i][p.gold_index]));
        }
        // No free arc and free gold arc could still be paired.
        for (i, row) in scores.iter().enumerate() {
            if arcs.contains(&ids[i]) { continue; }
            for (j, s) in row.iter().enumerate() {
                prop_assert!(golds.contains(&j) || *s < theta);
            }
        }
        // The single best pair above threshold is always taken.
        let best = scores.iter().enumerate()
            .flat_map(|(i, row)| row.iter().enumerate().map(move |(j, s)| (*s, i, j)))
            .filter(|(s, _, _)| *s >= theta)
            .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)).then(b.2.cmp(&a.2)));
        if let Some((_, i, j)) = best {
            prop_assert_eq!(r.gold_for(&ids[i]), Some(j));
        }
    }

    #[test]
    fn overrides_take_precedence((scores, m) in score_matrix(), pick in any::<proptest::sample::Index>()) {
        let ids: Vec<ArcId> = (0..scores.len()).map(|i| ArcId::from_raw(format!("arc-{i}"))).collect();
        let arc = pick.index(ids.len());
        let target = pick.index(m);
        let o = [MappingOverride { arc_id: ids[arc].clone(), gold_index: Some(target) }];
        let r = match_by_scores(&ids, &scores, m, &o, 0.0).unwrap();
        prop_assert_eq!(r.gold_for(&ids[arc]), Some(target));
        prop_assert_eq!(r.pairs.iter().filter(|p| p.gold_index == target).count(), 1);
    }
}
