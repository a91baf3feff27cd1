//! Name-keyed factories for interchangeable strategies.
//!
//! Distance metrics, sentence embedders and report renderers are each
//! selected at runtime by the name given in a run config. Every family has a
//! process-wide default registry (see [`crate::metric::registry`],
//! [`crate::embedding::registry`] and [`crate::explain::registry`]); callers
//! that need extra variants build their own `Registry` and register into it.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};

pub type Factory<A, T> = Box<dyn Fn(&A) -> Result<Arc<T>> + Send + Sync>;

pub struct Registry<A, T: ?Sized> {
    kind: &'static str,
    factories: BTreeMap<String, Factory<A, T>>,
}

impl<A, T: ?Sized> Registry<A, T> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            factories: BTreeMap::new(),
        }
    }

    /// Registers `factory` under `name`. Fails if the name is taken.
    pub fn register<F>(&mut self, name: &str, factory: F) -> Result<()>
    where
        F: Fn(&A) -> Result<Arc<T>> + Send + Sync + 'static,
    {
        if self.factories.contains_key(name) {
            return Err(Error::Config(format!(
                "{} `{name}` is already registered",
                self.kind
            )));
        }
        self.factories.insert(name.to_owned(), Box::new(factory));
        Ok(())
    }

    pub fn create(&self, name: &str, args: &A) -> Result<Arc<T>> {
        let factory = self
            .factories
            .get(name)
            .ok_or_else(|| Error::UnknownStrategy {
                kind: self.kind,
                name: name.to_owned(),
                available: self.names(),
            })?;
        factory(args)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }

    /// Registered names in sorted order.
    pub fn names(&self) -> Vec<String> {
        self.factories.keys().cloned().collect()
    }

    pub fn kind(&self) -> &'static str {
        self.kind
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    trait Greeter: Send + Sync {
        fn greet(&self) -> String;
    }

    struct Plain(String);

    impl Greeter for Plain {
        fn greet(&self) -> String {
            format!("hello {}", self.0)
        }
    }

    #[test]
    fn creates_by_name_with_args() {
        let mut reg: Registry<String, dyn Greeter> = Registry::new("greeter");
        reg.register("plain", |who: &String| Ok(Arc::new(Plain(who.clone())) as Arc<dyn Greeter>))
            .unwrap();
        let g = reg.create("plain", &"bob".to_string()).unwrap();
        assert_eq!(g.greet(), "hello bob");
        assert_eq!(reg.names(), vec!["plain"]);
    }

    #[test]
    fn duplicate_and_unknown_names_error() {
        let mut reg: Registry<(), dyn Greeter> = Registry::new("greeter");
        reg.register("a", |_| Ok(Arc::new(Plain("x".into())) as Arc<dyn Greeter>))
            .unwrap();
        assert!(reg
            .register("a", |_| Ok(Arc::new(Plain("y".into())) as Arc<dyn Greeter>))
            .is_err());
        match reg.create("b", &()) {
            Err(Error::UnknownStrategy { name, available, .. }) => {
                assert_eq!(name, "b");
                assert_eq!(available, vec!["a"]);
            }
            Err(other) => panic!("unexpected error {other}"),
            Ok(_) => panic!("unknown name resolved"),
        }
    }
}
