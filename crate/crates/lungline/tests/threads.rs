//! Worker count never changes results. Kept in its own binary because it
//! sets `LUNGLINE_THREADS`.

use std::path::Path;

use lungline::pipeline::{thread_cap, ImageJob, Pipeline, THREADS_ENV};
use lungline_core::arch::build_mobilenet_v2_seeded;

#[test]
fn outputs_are_identical_for_any_worker_count() {
    let model = build_mobilenet_v2_seeded(3, 1.0, 6)
        .unwrap()
        .bind_initialized();
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data");
    let jobs: Vec<ImageJob> = ["covid", "normal", "viral_pneumonia", "covid"]
        .iter()
        .map(|k| ImageJob {
            path: data.join(format!("phantom_{k}.png")),
            draw: None,
        })
        .collect();
    let bits = |threads| -> Vec<u32> {
        let p = Pipeline::new(Some(threads)).unwrap();
        assert_eq!(p.threads(), threads);
        p.logits(&model, &jobs)
            .unwrap()
            .data()
            .iter()
            .map(|v| v.to_bits())
            .collect()
    };
    let one = bits(1);
    assert_eq!(one, bits(3));
    assert_eq!(one, bits(8));
    assert_eq!(one[..3], one[9..]);

    std::env::set_var(THREADS_ENV, "2");
    assert_eq!(thread_cap().unwrap(), Some(2));
    assert_eq!(Pipeline::from_env().unwrap().threads(), 2);
    std::env::set_var(THREADS_ENV, "0");
    assert!(thread_cap().is_err());
    std::env::set_var(THREADS_ENV, "many");
    assert!(thread_cap().is_err());
    std::env::remove_var(THREADS_ENV);
    assert_eq!(thread_cap().unwrap(), None);
}
