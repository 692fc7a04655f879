use std::io::Write;
use std::path::Path;

use nlfactor_experiments::data::{load_ratings, split, RatingsFormat, SplitSpec, SplitStrategy};
use nlfactor_experiments::Error;
use proptest::prelude::*;
use tempfile::NamedTempFile;

fn file_with(text: &str) -> NamedTempFile {
    let mut f = NamedTempFile::new().unwrap();
    f.write_all(text.as_bytes()).unwrap();
    f
}

fn jester_row(count: usize, ratings: &[(usize, f64)]) -> String {
    let mut row = vec!["99".to_string(); 100];
    for &(j, y) in ratings {
        row[j] = y.to_string();
    }
    format!("{count},{}\n", row.join(","))
}

#[test]
fn toy_movielens_file_is_reindexed() {
    let f = file_with("userId,movieId,rating,timestamp\n1,10,4.0,5\n1,20,3.5,6\n7,10,5.0,7\n");
    let ds = load_ratings(f.path(), RatingsFormat::MovielensCsv).unwrap();
    assert_eq!((ds.n_users(), ds.n_items(), ds.len()), (2, 2, 3));
    assert_eq!(ds.user_ids, vec!["1", "7"]);
    assert_eq!(ds.item_ids, vec!["10", "20"]);
    let ys: Vec<f64> = ds.ratings.iter().map(|s| s.y).collect();
    assert_eq!(ys, vec![4.0, 3.5, 5.0]);
    assert_eq!((ds.ratings[2].row, ds.ratings[2].col), (1, 0));
}

#[test]
fn duplicate_cells_keep_the_last_rating() {
    let f = file_with("userId,movieId,rating,timestamp\n1,10,4.0,5\n2,10,1.0,5\n1,10,2.5,9\n");
    let ds = load_ratings(f.path(), RatingsFormat::MovielensCsv).unwrap();
    assert_eq!(ds.len(), 2);
    assert_eq!(ds.ratings[0].y, 2.5);
}

#[test]
fn malformed_rows_report_their_line() {
    let f = file_with("userId,movieId,rating,timestamp\n1,10,4.0,5\n1,20,abc,6\n");
    match load_ratings(f.path(), RatingsFormat::MovielensCsv) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected a parse error, got {other:?}"),
    }
    let short = file_with("userId,movieId,rating,timestamp\n1,10\n");
    assert!(matches!(
        load_ratings(short.path(), RatingsFormat::MovielensCsv),
        Err(Error::Parse { line: 2, .. })
    ));
}

#[test]
fn header_only_file_is_empty() {
    let f = file_with("userId,movieId,rating,timestamp\n");
    assert!(matches!(
        load_ratings(f.path(), RatingsFormat::MovielensCsv),
        Err(Error::EmptyDataset { .. })
    ));
}

#[test]
fn missing_file_is_an_io_error() {
    let r = load_ratings(Path::new("/nonexistent/ratings.csv"), RatingsFormat::MovielensCsv);
    assert!(matches!(r, Err(Error::Io { .. })));
}

#[test]
fn jester_user_with_no_ratings_is_dropped() {
    let text = jester_row(2, &[(0, 1.5), (99, -9.75)]) + &jester_row(0, &[]) + &jester_row(1, &[(4, 0.0)]);
    let f = file_with(&text);
    let ds = load_ratings(f.path(), RatingsFormat::JesterDense).unwrap();
    assert_eq!(ds.n_users(), 2);
    assert_eq!(ds.dropped_users, vec!["2"]);
    assert_eq!(ds.len(), 3);
    assert_eq!(ds.item_ids, vec!["1", "100", "5"]);
    assert_eq!(ds.ratings[1].y, -9.75);
}

#[test]
fn jester_rejects_short_rows_and_out_of_scale_values() {
    let f = file_with("3,1.0,2.0\n");
    assert!(matches!(
        load_ratings(f.path(), RatingsFormat::JesterDense),
        Err(Error::Parse { line: 1, .. })
    ));
    let g = file_with(&(jester_row(1, &[(0, 1.0)]) + &jester_row(1, &[(3, 11.0)])));
    assert!(matches!(
        load_ratings(g.path(), RatingsFormat::JesterDense),
        Err(Error::Parse { line: 2, .. })
    ));
}

fn ratings_file(users: &[usize]) -> NamedTempFile {
    let mut text = String::from("userId,movieId,rating,timestamp\n");
    for (u, &count) in users.iter().enumerate() {
        for i in 0..count {
            text.push_str(&format!("{u},{i},{}.0,0\n", (u + i) % 5 + 1));
        }
    }
    file_with(&text)
}

#[test]
fn single_rating_users_keep_it_in_train() {
    let f = ratings_file(&[1, 10, 25]);
    let ds = load_ratings(f.path(), RatingsFormat::MovielensCsv).unwrap();
    let spec = SplitSpec::new(0.1, SplitStrategy::RowStratified, 3).unwrap();
    let parts = split(&ds, &spec);
    let held = |u: usize| parts.val.iter().filter(|s| s.row == u).count();
    assert_eq!((held(0), held(1), held(2)), (0, 1, 2));
    assert_eq!(parts.train.len() + parts.val.len(), 36);
}

#[test]
fn fixed_seed_gives_identical_splits() {
    let f = ratings_file(&[12, 30, 7, 19]);
    let ds = load_ratings(f.path(), RatingsFormat::MovielensCsv).unwrap();
    for strategy in [SplitStrategy::RowStratified, SplitStrategy::Uniform] {
        let spec = SplitSpec::new(0.25, strategy, 11).unwrap();
        assert_eq!(split(&ds, &spec), split(&ds, &spec));
    }
}

#[test]
fn holdout_fraction_must_be_a_proper_fraction() {
    for f in [0.0, 1.0, -0.1, f64::NAN] {
        assert!(SplitSpec::new(f, SplitStrategy::Uniform, 0).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn splits_are_disjoint_and_cover_the_dataset(
        users in prop::collection::vec(1usize..40, 1..12),
        fraction in 0.01f64..0.99,
        seed in any::<u64>(),
        uniform in any::<bool>(),
    ) {
        let f = ratings_file(&users);
        let ds = load_ratings(f.path(), RatingsFormat::MovielensCsv).unwrap();
        let strategy = if uniform { SplitStrategy::Uniform } else { SplitStrategy::RowStratified };
        let parts = split(&ds, &SplitSpec::new(fraction, strategy, seed).unwrap());
        prop_assert_eq!(parts.train.len() + parts.val.len(), ds.len());
        let mut cells: Vec<(usize, usize)> = parts.train.iter().chain(&parts.val).map(|s| (s.row, s.col)).collect();
        cells.sort();
        cells.dedup();
        prop_assert_eq!(cells.len(), ds.len());
        if !uniform {
            for (u, &count) in users.iter().enumerate() {
                let held = parts.val.iter().filter(|s| s.row == u).count();
                let expect = ((fraction * count as f64).floor() as usize).min(count - 1);
                prop_assert_eq!(held, expect);
            }
        }
    }
}
