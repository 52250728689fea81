//! Byte-for-byte golden artifacts for the bundled fixture.
//! Regenerate with `UPDATE_GOLDEN=1 cargo test -p vocabfree-core --test golden`.

mod common;

use vocabfree_core::runner::{cli_run_all, Providers};

#[test]
fn run_all_matches_golden() {
    let cfg = common::config();
    assert_eq!(cfg.seed, common::GOLDEN_SEED);
    let tmp = tempfile::tempdir().unwrap();
    cli_run_all(&cfg, &common::manifest(), &|s| Providers::from_config(&cfg, s), &common::options(tmp.path())).unwrap();
    let produced = common::files(tmp.path());

    let golden = common::golden_dir();
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        let _ = std::fs::remove_dir_all(&golden);
        std::fs::create_dir_all(&golden).unwrap();
        for (name, bytes) in &produced {
            std::fs::write(golden.join(name), bytes).unwrap();
        }
        return;
    }
    let expected = common::files(&golden);
    let names = |v: &[(String, Vec<u8>)]| v.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>();
    assert_eq!(names(&produced), names(&expected));
    for ((name, got), (_, want)) in produced.iter().zip(&expected) {
        assert!(
            got == want,
            "{name} differs from golden:\n--- got ---\n{}",
            String::from_utf8_lossy(got)
        );
    }
}
