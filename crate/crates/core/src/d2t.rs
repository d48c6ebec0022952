//! Synthetic box-score-to-summary task.
//!
//! A game is a set of (entity, relation type, value) records: two teams
//! with win/loss/point tallies, two players with point/assist/rebound
//! lines, plus one spare team and one spare player whose stats appear only
//! in the records — never in a summary — so the source always contains
//! plausible-but-wrong attention targets. The source side linearizes the
//! records as flat `entity | type | value` token triples; the target side
//! is a templated summary mentioning a seeded subset of them. A rule-based
//! extractor reads relations back out of generated text, which is what the
//! relation-level metrics (RG / CS / CO) are computed from.
//!
//! Entity names are single hyphenated tokens so the extraction window and
//! copy-candidate matching stay unambiguous. A seeded fraction of entities
//! get a unique numbered name that appears in only one game, keeping its
//! corpus frequency below any sensible vocabulary cutoff — those names can
//! only ever be produced by copying.
//!
//! Each summary also flips a seeded coin at designated entity boundaries
//! between two equal-length phrasings: one runs a stat value straight into
//! the next entity name (reproducing a bigram that literally occurs in the
//! linearized source, since that value and that entity are adjacent
//! records), the other names the stat type first. The relations expressed
//! are identical either way, so the choice is free at decoding time and
//! measures how strongly a trained model leans on source adjacency rather
//! than how accurate it is.

use crate::metrics::dld_similarity;
use crate::vocab::tokenize;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum D2tError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error("dataset is empty")]
    Empty,
}

/// Relation types in canonical order; ties between a number matching two
/// of an entity's records resolve to the earlier variant. `Unmatched`
/// marks extracted numbers that match none of the entity's values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum RelationType {
    Wins,
    Losses,
    Points,
    Assists,
    Rebounds,
    Unmatched,
}

impl RelationType {
    pub fn as_str(&self) -> &'static str {
        match self {
            RelationType::Wins => "wins",
            RelationType::Losses => "losses",
            RelationType::Points => "points",
            RelationType::Assists => "assists",
            RelationType::Rebounds => "rebounds",
            RelationType::Unmatched => "unmatched",
        }
    }
}

/// One fact: an entity, what is being counted, and the count.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Record {
    pub entity: String,
    #[serde(rename = "type")]
    pub rtype: RelationType,
    pub value: i64,
}

/// One game: its full record set, the linearized source, and the gold
/// summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GameInstance {
    pub records: Vec<Record>,
    pub summary: String,
    pub linearized_src: String,
}

const TEAM_ADJ: [&str; 24] = [
    "red", "blue", "golden", "silver", "iron", "stone", "river", "north", "south", "east",
    "west", "wild", "royal", "grand", "swift", "shadow", "storm", "ember", "frost", "crimson",
    "cobalt", "ivory", "onyx", "jade",
];
const TEAM_ANIMAL: [&str; 24] = [
    "hawks", "wolves", "tigers", "bears", "eagles", "lions", "sharks", "owls", "foxes",
    "bulls", "crows", "vipers", "panthers", "ravens", "bison", "cougars", "falcons", "herons",
    "jackals", "lynxes", "moose", "otters", "pythons", "stallions",
];
const PLAYER_FIRST: [&str; 24] = [
    "jordan", "alex", "sam", "riley", "casey", "morgan", "taylor", "jamie", "drew", "reese",
    "quinn", "avery", "blake", "corey", "devon", "ellis", "frankie", "harley", "jesse",
    "kendall", "logan", "marley", "noel", "parker",
];
const PLAYER_LAST: [&str; 24] = [
    "smith", "jones", "miller", "davis", "garcia", "rodriguez", "wilson", "martinez",
    "anderson", "thomas", "moore", "jackson", "martin", "lee", "perez", "white", "harris",
    "clark", "lewis", "young", "walker", "hall", "allen", "king",
];

fn team_name(k: usize) -> String {
    format!("{}-{}", TEAM_ADJ[k % 24], TEAM_ANIMAL[(k / 24) % 24])
}

fn player_name(k: usize) -> String {
    format!("{}-{}", PLAYER_FIRST[k % 24], PLAYER_LAST[(k / 24) % 24])
}

/// Inclusive sampling range for each relation type's value.
fn value_range(rtype: RelationType) -> (i64, i64) {
    match rtype {
        RelationType::Wins | RelationType::Losses => (10, 69),
        RelationType::Points => (80, 199),
        RelationType::Assists => (10, 59),
        RelationType::Rebounds => (20, 69),
        RelationType::Unmatched => (0, 0),
    }
}

/// Render records as a flat token sequence, three fields per record
/// separated by standalone pipes.
pub fn linearize(records: &[Record]) -> String {
    let mut parts = Vec::with_capacity(records.len());
    for r in records {
        parts.push(format!("{} | {} | {}", r.entity, r.rtype.as_str(), r.value));
    }
    parts.join(" ")
}

struct GameEntities {
    team_a: String,
    team_b: String,
    player_a: String,
    player_b: String,
}

fn record_value(records: &[Record], entity: &str, rtype: RelationType) -> i64 {
    records
        .iter()
        .find(|r| r.entity == entity && r.rtype == rtype)
        .map(|r| r.value)
        .expect("generator mentions only existing records")
}

/// Two equal-length phrasings for the boundary between one entity's last
/// stat and the next entity's line. The records are linearized in a fixed
/// order, so at specific boundaries the source itself contains the stat
/// value immediately followed by the next entity name; the `direct`
/// variant reproduces that adjacency in the summary, while the `worded`
/// variant names the stat first and lets the entity open its line bare.
/// Both variants carry the same relations at the same token count, so
/// neither extraction nor decode-time sequence length depends on the coin.
fn boundary(coin: bool, entity: &str, verb: &str, type_word: &str) -> String {
    if coin {
        format!("{entity} {verb}")
    } else {
        format!("{type_word} {entity}")
    }
}

/// The fixed summary shapes; the per-game seed picks one and flips one
/// coin per entity boundary. Every number sits within 8 tokens of its
/// entity mention and windows close at the next entity, so extraction
/// recovers the same tuples whichever way each coin lands.
fn summary_text(
    records: &[Record],
    ents: &GameEntities,
    template: usize,
    coins: [bool; 2],
) -> String {
    let v = |entity: &str, rt| record_value(records, entity, rt);
    let (a, b) = (ents.team_a.as_str(), ents.team_b.as_str());
    let (pa, pb) = (ents.player_a.as_str(), ents.player_b.as_str());
    match template {
        0 => format!(
            "the {a} have {} wins and {} losses . the {b} scored {} {} {} points and {} {} {} rebounds and {} assists .",
            v(a, RelationType::Wins),
            v(a, RelationType::Losses),
            v(b, RelationType::Points),
            boundary(coins[0], pa, "added", "points"),
            v(pa, RelationType::Points),
            v(pa, RelationType::Rebounds),
            boundary(coins[1], pb, "pulled", "rebounds"),
            v(pb, RelationType::Rebounds),
            v(pb, RelationType::Assists),
        ),
        1 => format!(
            "the {a} scored {} {} to {} losses . {pa} : {} points , {} assists and {} {} {} points .",
            v(a, RelationType::Points),
            boundary(coins[0], b, "fell", "points"),
            v(b, RelationType::Losses),
            v(pa, RelationType::Points),
            v(pa, RelationType::Assists),
            v(pa, RelationType::Rebounds),
            boundary(coins[1], pb, "scored", "rebounds"),
            v(pb, RelationType::Points),
        ),
        2 => format!(
            "the {a} scored {} {} {} wins and {} losses . {pb} : {} points , {} assists . {pa} pulled {} rebounds .",
            v(a, RelationType::Points),
            boundary(coins[0], b, "have", "points"),
            v(b, RelationType::Wins),
            v(b, RelationType::Losses),
            v(pb, RelationType::Points),
            v(pb, RelationType::Assists),
            v(pa, RelationType::Rebounds),
        ),
        _ => format!(
            "{pa} added {} points and {} {} {} rebounds and {} assists . the {b} have {} wins , {} losses . the {a} scored {} points .",
            v(pa, RelationType::Points),
            v(pa, RelationType::Rebounds),
            boundary(coins[0], pb, "pulled", "rebounds"),
            v(pb, RelationType::Rebounds),
            v(pb, RelationType::Assists),
            v(b, RelationType::Wins),
            v(b, RelationType::Losses),
            v(a, RelationType::Points),
        ),
    }
}

/// Deterministically generate `n_games` synthetic games. Entities come
/// from pools of `name_pool_size` team and player names; each entity slot
/// independently swaps in a unique single-game name with probability
/// `oov_name_fraction`.
pub fn generate_dataset(
    seed: u64,
    n_games: usize,
    name_pool_size: usize,
    oov_name_fraction: f64,
) -> Vec<GameInstance> {
    assert!(
        (0.0..=1.0).contains(&oov_name_fraction),
        "oov_name_fraction must be in [0, 1]"
    );
    let pool = name_pool_size.clamp(2, 576);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rare_counter = 0usize;
    let mut games = Vec::with_capacity(n_games);

    for _ in 0..n_games {
        let mut pick_name = |make: fn(usize) -> String, avoid: &[&str]| -> String {
            if rng.random::<f64>() < oov_name_fraction {
                let name = format!("{}-{}", make(rng.random_range(0..pool)), rare_counter);
                rare_counter += 1;
                name
            } else {
                loop {
                    let name = make(rng.random_range(0..pool));
                    if !avoid.contains(&name.as_str()) {
                        return name;
                    }
                }
            }
        };
        let team_a = pick_name(team_name, &[]);
        let team_b = pick_name(team_name, &[&team_a]);
        let player_a = pick_name(player_name, &[]);
        let player_b = pick_name(player_name, &[&player_a]);
        // Two entities that exist only in the records: their stats sit in
        // the source as confusable attention targets, but no summary ever
        // mentions them.
        let spare_team = pick_name(team_name, &[&team_a, &team_b]);
        let spare_player = pick_name(player_name, &[&player_a, &player_b]);
        let ents = GameEntities { team_a, team_b, player_a, player_b };

        let team_types = [RelationType::Wins, RelationType::Losses, RelationType::Points];
        let player_types = [RelationType::Points, RelationType::Assists, RelationType::Rebounds];
        let mut records = Vec::with_capacity(18);
        let stat_line = |rng: &mut ChaCha8Rng,
                         records: &mut Vec<Record>,
                         entity: &str,
                         rtypes: [RelationType; 3]| {
            for rtype in rtypes {
                let (lo, hi) = value_range(rtype);
                records.push(Record {
                    entity: entity.to_string(),
                    rtype,
                    value: rng.random_range(lo..=hi),
                });
            }
        };
        stat_line(&mut rng, &mut records, &ents.team_a, team_types);
        stat_line(&mut rng, &mut records, &ents.team_b, team_types);
        stat_line(&mut rng, &mut records, &ents.player_a, player_types);
        stat_line(&mut rng, &mut records, &ents.player_b, player_types);
        // Spares go last so the value-to-next-entity adjacencies among the
        // mentioned records stay where summary_text expects them.
        stat_line(&mut rng, &mut records, &spare_team, team_types);
        stat_line(&mut rng, &mut records, &spare_player, player_types);

        let template = rng.random_range(0..4);
        let coins = [rng.random::<bool>(), rng.random::<bool>()];
        let summary = summary_text(&records, &ents, template, coins);
        let linearized_src = linearize(&records);
        games.push(GameInstance { records, summary, linearized_src });
    }
    games
}

/// How far past an entity mention the extractor pairs numbers with it.
pub const EXTRACTION_WINDOW: usize = 8;

/// Scan text for entity mentions and pair each with the numeric tokens in
/// the following window, stopping early at the next entity mention. Each
/// number is typed by matching it against that entity's record values
/// (canonical-order tie-break); numbers matching nothing are `Unmatched`.
pub fn extract_relations(text: &str, records: &[Record]) -> Vec<Record> {
    let tokens = tokenize(text);
    let mut by_entity: HashMap<&str, Vec<&Record>> = HashMap::new();
    for r in records {
        by_entity.entry(r.entity.as_str()).or_default().push(r);
    }
    let mut relations = Vec::new();
    for (i, tok) in tokens.iter().enumerate() {
        let Some(entity_records) = by_entity.get(tok.as_str()) else {
            continue;
        };
        for j in i + 1..tokens.len().min(i + 1 + EXTRACTION_WINDOW) {
            if by_entity.contains_key(tokens[j].as_str()) {
                break;
            }
            let Ok(value) = tokens[j].parse::<i64>() else {
                continue;
            };
            let rtype = entity_records
                .iter()
                .filter(|r| r.value == value)
                .map(|r| r.rtype)
                .min()
                .unwrap_or(RelationType::Unmatched);
            relations.push(Record { entity: tok.clone(), rtype, value });
        }
    }
    relations
}

/// Relation-generation score: the percentage of extracted tuples that are
/// real records, and how many distinct real tuples were produced.
pub fn rg_metrics(extracted: &[Record], records: &[Record]) -> (f64, usize) {
    if extracted.is_empty() {
        return (0.0, 0);
    }
    let truth: std::collections::HashSet<&Record> = records.iter().collect();
    let correct = extracted.iter().filter(|r| truth.contains(r)).count();
    let unique: std::collections::HashSet<&Record> = extracted
        .iter()
        .filter(|r| truth.contains(r))
        .collect();
    (
        100.0 * correct as f64 / extracted.len() as f64,
        unique.len(),
    )
}

/// Content-selection precision/recall over unique tuples, plus content
/// ordering as DLD similarity over the full tuple sequences.
pub fn cs_co_metrics(extracted: &[Record], gold: &[Record]) -> (f64, f64, f64) {
    let hyp_set: std::collections::HashSet<&Record> = extracted.iter().collect();
    let gold_set: std::collections::HashSet<&Record> = gold.iter().collect();
    let inter = hyp_set.intersection(&gold_set).count();
    let cs_p = if hyp_set.is_empty() {
        0.0
    } else {
        100.0 * inter as f64 / hyp_set.len() as f64
    };
    let cs_r = if gold_set.is_empty() {
        0.0
    } else {
        100.0 * inter as f64 / gold_set.len() as f64
    };
    let co = dld_similarity(extracted, gold);
    (cs_p, cs_r, co)
}

/// Seeded 80/10/10 split by shuffled index.
pub fn split_dataset(
    games: Vec<GameInstance>,
    seed: u64,
) -> (Vec<GameInstance>, Vec<GameInstance>, Vec<GameInstance>) {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..games.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = games.len();
    let n_train = n * 8 / 10;
    let n_valid = n / 10;
    let mut slots: Vec<Option<GameInstance>> = games.into_iter().map(Some).collect();
    let take = |slots: &mut Vec<Option<GameInstance>>, ids: &[usize]| {
        ids.iter()
            .map(|&i| slots[i].take().expect("each index taken once"))
            .collect::<Vec<_>>()
    };
    let train = take(&mut slots, &order[..n_train]);
    let valid = take(&mut slots, &order[n_train..n_train + n_valid]);
    let test = take(&mut slots, &order[n_train + n_valid..]);
    (train, valid, test)
}

/// Write one `{"records":[...],"summary":...}` JSON object per line.
pub fn write_dataset(path: &Path, games: &[GameInstance]) -> Result<(), D2tError> {
    #[derive(Serialize)]
    struct Line<'a> {
        records: &'a [Record],
        summary: &'a str,
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for g in games {
        serde_json::to_writer(&mut out, &Line { records: &g.records, summary: &g.summary })?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

impl From<serde_json::Error> for D2tError {
    fn from(e: serde_json::Error) -> Self {
        D2tError::Parse { line: 0, source: e }
    }
}

/// Read a dataset file written by [`write_dataset`], rebuilding each
/// linearized source from the records.
pub fn load_dataset(path: &Path) -> Result<Vec<GameInstance>, D2tError> {
    #[derive(Deserialize)]
    struct Line {
        records: Vec<Record>,
        summary: String,
    }
    let reader = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut games = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(&line)
            .map_err(|source| D2tError::Parse { line: i + 1, source })?;
        let linearized_src = linearize(&parsed.records);
        games.push(GameInstance {
            records: parsed.records,
            summary: parsed.summary,
            linearized_src,
        });
    }
    Ok(games)
}

/// Write games in the generic `{"src","tgt"}` pair format the trainer
/// consumes (src = linearization, tgt = summary).
pub fn write_pairs(path: &Path, games: &[GameInstance]) -> Result<(), D2tError> {
    #[derive(Serialize)]
    struct Pair<'a> {
        src: &'a str,
        tgt: &'a str,
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for g in games {
        serde_json::to_writer(&mut out, &Pair { src: &g.linearized_src, tgt: &g.summary })?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::Vocabulary;

    fn rec(entity: &str, rtype: RelationType, value: i64) -> Record {
        Record { entity: entity.into(), rtype, value }
    }

    #[test]
    fn same_seed_reproduces_the_dataset() {
        let a = generate_dataset(42, 25, 30, 0.3);
        let b = generate_dataset(42, 25, 30, 0.3);
        assert_eq!(a.len(), 25);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.records, y.records);
            assert_eq!(x.summary, y.summary);
            assert_eq!(x.linearized_src, y.linearized_src);
        }
        let c = generate_dataset(43, 25, 30, 0.3);
        assert!(a.iter().zip(&c).any(|(x, y)| x.summary != y.summary));
    }

    #[test]
    fn extraction_matches_the_worked_example() {
        let records = vec![rec("hawks", RelationType::Points, 142)];
        let got = extract_relations("hawks scored 142 points", &records);
        assert_eq!(got, vec![rec("hawks", RelationType::Points, 142)]);
    }

    #[test]
    fn tie_between_assists_and_rebounds_picks_assists() {
        let records = vec![
            rec("jordan-smith", RelationType::Rebounds, 7),
            rec("jordan-smith", RelationType::Assists, 7),
        ];
        let got = extract_relations("jordan-smith had 7 tonight", &records);
        assert_eq!(got, vec![rec("jordan-smith", RelationType::Assists, 7)]);
    }

    #[test]
    fn no_entity_mention_extracts_nothing() {
        let records = vec![rec("hawks", RelationType::Points, 100)];
        assert!(extract_relations("a quiet night with 100 fans", &records).is_empty());
    }

    #[test]
    fn unmatched_numbers_are_flagged() {
        let records = vec![rec("hawks", RelationType::Points, 100)];
        let got = extract_relations("hawks scored 93 points", &records);
        assert_eq!(got, vec![rec("hawks", RelationType::Unmatched, 93)]);
    }

    #[test]
    fn window_boundary_is_eight_tokens_and_stops_at_entities() {
        let records = vec![
            rec("hawks", RelationType::Points, 100),
            rec("wolves", RelationType::Points, 90),
        ];
        // Value exactly 8 tokens after the entity: kept.
        let at8 = extract_relations("hawks w1 w2 w3 w4 w5 w6 w7 100", &records);
        assert_eq!(at8, vec![rec("hawks", RelationType::Points, 100)]);
        // Nine tokens after: outside the window.
        let at9 = extract_relations("hawks w1 w2 w3 w4 w5 w6 w7 w8 100", &records);
        assert!(at9.is_empty());
        // A second entity mention closes the first window.
        let crossed = extract_relations("hawks beat wolves with 90 points", &records);
        assert_eq!(crossed, vec![rec("wolves", RelationType::Points, 90)]);
    }

    #[test]
    fn gold_summaries_extract_cleanly_across_seeds() {
        // Generator invariant: on gold summaries the extractor recovers
        // only true records (no UNMATCHED, nothing foreign), and every
        // numeric token is attributed to an entity.
        for seed in 0..100 {
            let games = generate_dataset(seed, 4, 20, 0.25);
            for g in &games {
                let extracted = extract_relations(&g.summary, &g.records);
                let truth: std::collections::HashSet<&Record> = g.records.iter().collect();
                for r in &extracted {
                    assert_ne!(
                        r.rtype,
                        RelationType::Unmatched,
                        "seed {seed}: unmatched number in gold summary {:?}",
                        g.summary
                    );
                    assert!(truth.contains(r), "seed {seed}: foreign tuple {r:?}");
                }
                let numeric_tokens = tokenize(&g.summary)
                    .iter()
                    .filter(|t| t.parse::<i64>().is_ok())
                    .count();
                assert_eq!(
                    extracted.len(),
                    numeric_tokens,
                    "seed {seed}: some summary number escaped the window in {:?}",
                    g.summary
                );
                let (rg_p, _) = rg_metrics(&extracted, &g.records);
                assert_eq!(rg_p, 100.0, "seed {seed}");
            }
        }
    }

    #[test]
    fn boundary_coins_toggle_source_adjacency_but_not_relations_or_length() {
        let games = generate_dataset(17, 1, 20, 0.0);
        let g = &games[0];
        let ents = GameEntities {
            team_a: g.records[0].entity.clone(),
            team_b: g.records[3].entity.clone(),
            player_a: g.records[6].entity.clone(),
            player_b: g.records[9].entity.clone(),
        };
        let src_toks = tokenize(&g.linearized_src);
        let src_bigrams: std::collections::HashSet<(&str, &str)> = src_toks
            .windows(2)
            .map(|w| (w[0].as_str(), w[1].as_str()))
            .collect();
        let count_shared = |text: &str| {
            let toks = tokenize(text);
            toks.windows(2)
                .filter(|w| src_bigrams.contains(&(w[0].as_str(), w[1].as_str())))
                .count()
        };
        let tuples = |text: &str| {
            let rels = extract_relations(text, &g.records);
            assert!(rels.iter().all(|r| r.rtype != RelationType::Unmatched));
            rels.into_iter().collect::<std::collections::HashSet<_>>()
        };
        // Junctions per template: the first two shapes have two coin
        // boundaries, the last two have one.
        for (template, junctions) in [(0, 2), (1, 2), (2, 1), (3, 1)] {
            let direct = summary_text(&g.records, &ents, template, [true, true]);
            let worded = summary_text(&g.records, &ents, template, [false, false]);
            assert_eq!(
                tokenize(&direct).len(),
                tokenize(&worded).len(),
                "template {template}: coin changed summary length"
            );
            assert_eq!(
                tuples(&direct),
                tuples(&worded),
                "template {template}: coin changed extracted relations"
            );
            assert_eq!(
                count_shared(&direct),
                junctions,
                "template {template}: {direct}"
            );
            assert_eq!(count_shared(&worded), 0, "template {template}: {worded}");
        }
    }

    #[test]
    fn summaries_and_sources_stay_within_model_budgets() {
        let games = generate_dataset(7, 50, 40, 0.3);
        for g in &games {
            assert_eq!(g.records.len(), 18);
            assert!(tokenize(&g.linearized_src).len() <= 96);
            let summary_toks = tokenize(&g.summary);
            assert!(summary_toks.len() <= 40);
            // The last six records belong to the spare entities, which must
            // stay source-only.
            for r in &g.records[12..] {
                assert!(!summary_toks.contains(&r.entity), "spare {} mentioned", r.entity);
            }
        }
    }

    #[test]
    fn rg_metrics_match_hand_counts() {
        let records = vec![rec("hawks", RelationType::Points, 100)];
        let extracted = vec![
            rec("hawks", RelationType::Points, 100),
            rec("hawks", RelationType::Unmatched, 93),
        ];
        let (p, count) = rg_metrics(&extracted, &records);
        assert!((p - 50.0).abs() < 1e-12);
        assert_eq!(count, 1);
        assert_eq!(rg_metrics(&[], &records), (0.0, 0));
        let all = rg_metrics(&records, &records);
        assert_eq!(all, (100.0, 1));
        // Duplicate correct mentions: precision counts occurrences, the
        // unique count does not.
        let dup = vec![
            rec("hawks", RelationType::Points, 100),
            rec("hawks", RelationType::Points, 100),
        ];
        assert_eq!(rg_metrics(&dup, &records), (100.0, 1));
    }

    #[test]
    fn cs_co_metrics_match_hand_counts() {
        let a = vec![
            rec("hawks", RelationType::Points, 100),
            rec("wolves", RelationType::Points, 90),
        ];
        let (p, r, co) = cs_co_metrics(&a, &a);
        assert_eq!((p, r, co), (100.0, 100.0, 100.0));

        let reversed: Vec<Record> = a.iter().rev().cloned().collect();
        let (p, r, co) = cs_co_metrics(&reversed, &a);
        assert_eq!((p, r), (100.0, 100.0));
        assert!(co < 100.0);

        let disjoint = vec![rec("bears", RelationType::Wins, 20)];
        let (p, r, co) = cs_co_metrics(&disjoint, &a);
        assert_eq!((p, r), (0.0, 0.0));
        assert!(co < 100.0);
    }

    #[test]
    fn split_is_deterministic_and_partitions_the_data() {
        let games = generate_dataset(3, 40, 30, 0.2);
        let (tr1, va1, te1) = split_dataset(games.clone(), 9);
        let (tr2, va2, te2) = split_dataset(games.clone(), 9);
        assert_eq!(tr1.len(), 32);
        assert_eq!(va1.len(), 4);
        assert_eq!(te1.len(), 4);
        let key = |g: &GameInstance| g.summary.clone();
        assert_eq!(
            tr1.iter().map(key).collect::<Vec<_>>(),
            tr2.iter().map(key).collect::<Vec<_>>()
        );
        assert_eq!(va1.iter().map(key).collect::<Vec<_>>(), va2.iter().map(key).collect::<Vec<_>>());
        assert_eq!(te1.iter().map(key).collect::<Vec<_>>(), te2.iter().map(key).collect::<Vec<_>>());
        // Partition: every original summary appears exactly once.
        let mut all: Vec<String> = tr1.iter().chain(&va1).chain(&te1).map(|g| g.summary.clone()).collect();
        let mut orig: Vec<String> = games.iter().map(|g| g.summary.clone()).collect();
        all.sort();
        orig.sort();
        assert_eq!(all, orig);
    }

    fn corpus_of(games: &[GameInstance]) -> Vec<Vec<String>> {
        games
            .iter()
            .flat_map(|g| [tokenize(&g.linearized_src), tokenize(&g.summary)])
            .collect()
    }

    #[test]
    fn zero_oov_fraction_keeps_every_entity_in_vocabulary() {
        let games = generate_dataset(11, 60, 12, 0.0);
        let vocab = Vocabulary::build(&corpus_of(&games), 5000, 1);
        for g in &games {
            for r in &g.records {
                assert!(vocab.contains(&r.entity), "{} missing", r.entity);
            }
        }
    }

    #[test]
    fn rare_names_fall_below_the_frequency_cutoff() {
        let games = generate_dataset(11, 60, 12, 0.4);
        let corpus = corpus_of(&games);
        let vocab = Vocabulary::build(&corpus, 5000, 10);
        let mut freq: HashMap<&str, usize> = HashMap::new();
        for sent in &corpus {
            for tok in sent {
                *freq.entry(tok.as_str()).or_default() += 1;
            }
        }
        let mut oov_entities = 0;
        for g in &games {
            for r in &g.records {
                if !vocab.contains(&r.entity) {
                    oov_entities += 1;
                    assert!(freq[r.entity.as_str()] < 10);
                }
            }
        }
        assert!(oov_entities > 0, "expected some out-of-vocabulary entities");
    }

    #[test]
    fn linearization_round_trips_through_the_tokenizer() {
        let records = vec![
            rec("red-hawks", RelationType::Wins, 23),
            rec("red-hawks", RelationType::Points, 142),
        ];
        let toks = tokenize(&linearize(&records));
        assert_eq!(
            toks,
            vec!["red-hawks", "|", "wins", "|", "23", "red-hawks", "|", "points", "|", "142"]
        );
    }

    #[test]
    fn dataset_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let games = generate_dataset(5, 8, 20, 0.25);
        let data_path = dir.path().join("games.jsonl");
        write_dataset(&data_path, &games).unwrap();
        let loaded = load_dataset(&data_path).unwrap();
        assert_eq!(loaded.len(), games.len());
        for (a, b) in games.iter().zip(&loaded) {
            assert_eq!(a.records, b.records);
            assert_eq!(a.summary, b.summary);
            assert_eq!(a.linearized_src, b.linearized_src);
        }

        let pairs_path = dir.path().join("pairs.jsonl");
        write_pairs(&pairs_path, &games).unwrap();
        let pairs: Vec<(String, String)> = crate::vocab::load_pairs(&pairs_path)
            .unwrap()
            .collect::<Result<_, _>>()
            .unwrap();
        assert_eq!(pairs.len(), games.len());
        assert_eq!(pairs[0].0, games[0].linearized_src);
        assert_eq!(pairs[0].1, games[0].summary);
    }

    #[test]
    fn copy_candidates_cover_entities_and_values_but_not_template_words() {
        let games = generate_dataset(2, 5, 20, 0.5);
        let vocab = Vocabulary::build(&corpus_of(&games), 5000, 1);
        for g in &games {
            let ex = crate::vocab::encode_example(&g.linearized_src, &g.summary, &vocab);
            for (tok, &cc) in ex.tgt_tokens.iter().zip(&ex.copy_candidate) {
                let is_value = tok.parse::<i64>().is_ok();
                let is_entity = g.records.iter().any(|r| &r.entity == tok);
                if is_value || is_entity {
                    assert!(cc, "{tok} should be a copy candidate");
                }
                if ["scored", "added", "pulled", "have", "fell", "the"].contains(&tok.as_str()) {
                    assert!(!cc, "{tok} is template-only and cannot come from the source");
                }
            }
        }
    }
}
