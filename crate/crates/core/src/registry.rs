// SPDX-License-Identifier: MIT OR Apache-2.0

//! Name-keyed registry of interchangeable strategies.
//!
//! Threshold estimators, evaluation metrics and edge orderings are all
//! selected at runtime by name (from the CLI or a run config). Each family
//! keeps its constructors in a [`Registry`] so new variants plug in without
//! touching the call sites.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{GccError, Result};

pub struct Registry<T: ?Sized> {
    kind: &'static str,
    entries: BTreeMap<String, Arc<T>>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: BTreeMap::new(),
        }
    }

    /// Registers `item` under `name`, replacing any previous entry.
    pub fn register(&mut self, name: impl Into<String>, item: Arc<T>) -> &mut Self {
        self.entries.insert(name.into(), item);
        self
    }

    pub fn get(&self, name: &str) -> Result<Arc<T>> {
        self.entries
            .get(name)
            .cloned()
            .ok_or_else(|| GccError::UnknownStrategy {
                kind: self.kind,
                name: name.to_string(),
                available: self.names().join(", "),
            })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    /// Registered names in sorted order.
    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }
}

impl<T: ?Sized> std::fmt::Debug for Registry<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Registry")
            .field("kind", &self.kind)
            .field("entries", &self.names())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    trait Greeter: Send + Sync {
        fn greet(&self) -> String;
    }

    struct Hello;
    impl Greeter for Hello {
        fn greet(&self) -> String {
            "hello".into()
        }
    }

    #[test]
    fn lookup_and_unknown() {
        let mut reg: Registry<dyn Greeter> = Registry::new("greeter");
        reg.register("hello", Arc::new(Hello));
        assert_eq!(reg.get("hello").unwrap().greet(), "hello");
        let err = reg.get("bye").err().unwrap().to_string();
        assert!(err.contains("unknown greeter strategy"), "{err}");
        assert!(err.contains("hello"));
    }
}
