//! Shared fixtures for the benchmarks.

use cogdiag::simulate::{default_catalog, random_qmatrix, sample_cohort, sample_responses, ResponseModel};
use cogdiag::{Dataset, StudentRecord};

/// A simulated dataset over the default 14-concept catalog.
pub fn simulated(students: usize, exercises: usize, seed: u64) -> Dataset {
    let catalog = default_catalog();
    let q = random_qmatrix(&catalog, exercises, 2, seed);
    let cohort = sample_cohort(students, catalog.len(), seed, 0.8).expect("valid cohort");
    let model = ResponseModel::random(exercises, (0.2, 0.8), 8.0, seed);
    let log = sample_responses(&cohort, &q, &model, seed).expect("valid responses");
    let registry = cohort.iter().map(|s| StudentRecord::plain(&s.student_id)).collect();
    Dataset::new(catalog, q, registry, log).expect("consistent dataset")
}
