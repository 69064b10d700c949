//! Multiply-accumulate accounting.
//!
//! `matmul` and `conv2d` report the MACs they execute to a thread-local
//! ledger while [`measure`] is active. Callers label regions with [`scope`]
//! so counts can be attributed to model components.

use std::cell::RefCell;
use std::collections::BTreeMap;

thread_local! {
    static LEDGER: RefCell<Option<MacLedger>> = const { RefCell::new(None) };
    static SCOPES: RefCell<Vec<String>> = const { RefCell::new(Vec::new()) };
}

/// MAC totals keyed by `(scope path, op kind)`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MacLedger {
    entries: BTreeMap<(String, &'static str), u64>,
}

impl MacLedger {
    pub fn total(&self) -> u64 {
        self.entries.values().sum()
    }

    /// Sum over every entry whose scope path starts with `prefix`.
    pub fn under(&self, prefix: &str) -> u64 {
        self.entries
            .iter()
            .filter(|((path, _), _)| path.starts_with(prefix))
            .map(|(_, v)| v)
            .sum()
    }

    /// Sum over entries whose scope path ends with the segment `leaf`.
    pub fn leaf(&self, leaf: &str) -> u64 {
        self.entries
            .iter()
            .filter(|((path, _), _)| path.rsplit('/').next() == Some(leaf))
            .map(|(_, v)| v)
            .sum()
    }

    pub fn by_kind(&self, kind: &str) -> u64 {
        self.entries
            .iter()
            .filter(|((_, k), _)| *k == kind)
            .map(|(_, v)| v)
            .sum()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &'static str, u64)> {
        self.entries.iter().map(|((p, k), v)| (p.as_str(), *k, *v))
    }
}

/// Runs `f` with MAC counting enabled and returns what it executed.
/// Nested calls count into the innermost ledger only.
pub fn measure<R>(f: impl FnOnce() -> R) -> (R, MacLedger) {
    let outer = LEDGER.with(|l| l.borrow_mut().replace(MacLedger::default()));
    let out = f();
    let ledger = LEDGER.with(|l| std::mem::replace(&mut *l.borrow_mut(), outer));
    (out, ledger.unwrap_or_default())
}

/// Runs `f` under the scope segment `name`.
pub fn scope<R>(name: &str, f: impl FnOnce() -> R) -> R {
    struct Pop;
    impl Drop for Pop {
        fn drop(&mut self) {
            SCOPES.with(|s| {
                s.borrow_mut().pop();
            });
        }
    }
    SCOPES.with(|s| s.borrow_mut().push(name.to_owned()));
    let _pop = Pop;
    f()
}

pub fn current_scope() -> String {
    SCOPES.with(|s| s.borrow().join("/"))
}

pub(crate) fn record(kind: &'static str, macs: u64) {
    LEDGER.with(|l| {
        if let Some(ledger) = l.borrow_mut().as_mut() {
            *ledger.entries.entry((current_scope(), kind)).or_default() += macs;
        }
    });
}
