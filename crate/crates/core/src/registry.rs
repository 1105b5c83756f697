//! Name-keyed factories for the interchangeable pieces of the simulator
//! (read policies, activations, losses, weight stores).

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{McaError, Result};

pub type Factory<T, A> = fn(&A) -> Result<Box<T>>;

pub struct Registry<T: ?Sized, A = ()> {
    family: &'static str,
    entries: BTreeMap<&'static str, Factory<T, A>>,
}

impl<T: ?Sized, A> Registry<T, A> {
    pub fn new(family: &'static str) -> Self {
        Self {
            family,
            entries: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: &'static str, factory: Factory<T, A>) -> &mut Self {
        self.entries.insert(name, factory);
        self
    }

    pub fn with(mut self, name: &'static str, factory: Factory<T, A>) -> Self {
        self.register(name, factory);
        self
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn build(&self, name: &str, args: &A) -> Result<Box<T>> {
        match self.entries.get(name) {
            Some(f) => f(args),
            None => Err(McaError::UnknownName {
                family: self.family,
                name: name.to_string(),
                known: self.names().collect::<Vec<_>>().join(", "),
            }),
        }
    }
}

impl<T: ?Sized, A> fmt::Debug for Registry<T, A> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry")
            .field("family", &self.family)
            .field("names", &self.names().collect::<Vec<_>>())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    trait Shape {
        fn sides(&self) -> u32;
    }
    struct Tri;
    impl Shape for Tri {
        fn sides(&self) -> u32 {
            3
        }
    }

    #[test]
    fn build_and_unknown() {
        let r: Registry<dyn Shape> = Registry::new("shape").with("tri", |_| Ok(Box::new(Tri)));
        assert_eq!(r.build("tri", &()).unwrap().sides(), 3);
        let err = r.build("square", &()).err().unwrap().to_string();
        assert!(err.contains("square") && err.contains("tri"), "{err}");
    }
}
