use std::path::Path;

use adaptdepth::scenes::{generate_dataset, load_sequence, CorridorRecipe, FrameBundle, LoadOptions};

/// Outcome of one criterion: a list of named checks.
#[derive(Clone, Default)]
pub struct Verdict {
    checks: Vec<(String, bool, String)>,
}

impl Verdict {
    pub fn aborted(msg: String) -> Self {
        let mut v = Self::default();
        v.check("completed without panicking", false, msg);
        v
    }

    pub fn check(&mut self, what: impl Into<String>, pass: bool, detail: impl Into<String>) {
        self.checks.push((what.into(), pass, detail.into()));
    }

    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.1)
    }

    pub fn lines(&self) -> Vec<String> {
        self.checks
            .iter()
            .map(|(what, pass, detail)| format!("[{}] {what}: {detail}", if *pass { "ok" } else { "FAIL" }))
            .collect()
    }
}

/// Generates a corridor sequence into `dir` and loads its bundles.
pub fn corridor(recipe: &CorridorRecipe, dir: &Path) -> Vec<FrameBundle> {
    generate_dataset(&recipe.build().unwrap(), dir).unwrap();
    load_sequence(dir, &LoadOptions::default()).unwrap()
}

/// Bundles with both temporal neighbours.
pub fn interior(bundles: Vec<FrameBundle>) -> Vec<FrameBundle> {
    bundles.into_iter().filter(|b| b.prev.is_some() && b.next.is_some()).collect()
}
