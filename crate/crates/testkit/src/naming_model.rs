//! Naming directory modelled as one flat map per context, keyed by the
//! context's full path. Results are reported as error-code strings so they
//! can be compared with the service's `NamingError::code`.

use std::collections::{BTreeMap, HashMap};

use notibus_core::naming::ServiceRef;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Entry {
    Object(ServiceRef),
    Context,
}

#[derive(Debug, Clone)]
pub struct NamingModel {
    contexts: HashMap<Vec<String>, BTreeMap<String, Entry>>,
}

impl Default for NamingModel {
    fn default() -> Self {
        let mut contexts = HashMap::new();
        contexts.insert(Vec::new(), BTreeMap::new());
        NamingModel { contexts }
    }
}

pub type Outcome<T> = Result<T, &'static str>;

fn split(path: &[String]) -> (&[String], &String) {
    let (leaf, parent) = path.split_last().expect("non-empty name");
    (parent, leaf)
}

impl NamingModel {
    pub fn bind(&mut self, path: &[String], r: ServiceRef) -> Outcome<()> {
        let (parent, leaf) = split(path);
        let ctx = self.contexts.get_mut(parent).ok_or("MissingContext")?;
        if ctx.contains_key(leaf) {
            return Err("AlreadyBound");
        }
        ctx.insert(leaf.clone(), Entry::Object(r));
        Ok(())
    }

    pub fn rebind(&mut self, path: &[String], r: ServiceRef) -> Outcome<()> {
        let (parent, leaf) = split(path);
        let ctx = self.contexts.get_mut(parent).ok_or("MissingContext")?;
        if ctx.get(leaf) == Some(&Entry::Context) {
            return Err("CannotRebindContext");
        }
        ctx.insert(leaf.clone(), Entry::Object(r));
        Ok(())
    }

    pub fn bind_new_context(&mut self, path: &[String]) -> Outcome<()> {
        let (parent, leaf) = split(path);
        let ctx = self.contexts.get_mut(parent).ok_or("MissingContext")?;
        if ctx.contains_key(leaf) {
            return Err("AlreadyBound");
        }
        ctx.insert(leaf.clone(), Entry::Context);
        self.contexts.insert(path.to_vec(), BTreeMap::new());
        Ok(())
    }

    /// Contexts resolve to `None`, objects to their reference.
    pub fn resolve(&self, path: &[String]) -> Outcome<Option<ServiceRef>> {
        let (parent, leaf) = split(path);
        match self.contexts.get(parent).and_then(|c| c.get(leaf)) {
            None => Err("NotFound"),
            Some(Entry::Context) => Ok(None),
            Some(Entry::Object(r)) => Ok(Some(r.clone())),
        }
    }

    pub fn unbind(&mut self, path: &[String]) -> Outcome<()> {
        let (parent, leaf) = split(path);
        let entry = self
            .contexts
            .get(parent)
            .and_then(|c| c.get(leaf))
            .cloned()
            .ok_or("NotFound")?;
        if entry == Entry::Context {
            if !self.contexts[path].is_empty() {
                return Err("ContextNotEmpty");
            }
            self.contexts.remove(path);
        }
        self.contexts.get_mut(parent).unwrap().remove(leaf);
        Ok(())
    }

    /// `(component, is_context)` pairs in byte order.
    pub fn list(&self, path: &[String]) -> Outcome<Vec<(String, bool)>> {
        if !path.is_empty() {
            let (parent, leaf) = split(path);
            match self.contexts.get(parent).and_then(|c| c.get(leaf)) {
                None => return Err("NotFound"),
                Some(Entry::Object(_)) => return Err("NotAContext"),
                Some(Entry::Context) => {}
            }
        }
        Ok(self.contexts[path]
            .iter()
            .map(|(k, e)| (k.clone(), *e == Entry::Context))
            .collect())
    }

    /// Every context's full contents, for whole-state comparison.
    pub fn snapshot(&self) -> BTreeMap<Vec<String>, BTreeMap<String, Entry>> {
        self.contexts.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }
}
