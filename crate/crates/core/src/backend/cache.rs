use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{AttentionMatrix, Backend, DecodeParams, HeadAblationSpec, SteeringSpec};
use crate::assemble::{hash_text, AssembledInput};
use crate::error::{Error, Result};
use crate::label::Label;
use crate::tokenizer::Tokenizer;
use crate::uncertainty::Logits;

/// Memoizes backend calls on disk under `(input hash, call spec hash)`.
pub struct CachedBackend<B> {
    inner: B,
    dir: PathBuf,
}

impl<B: Backend> CachedBackend<B> {
    pub fn new(inner: B, dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::file(&dir, e))?;
        Ok(CachedBackend { inner, dir })
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    fn path(&self, kind: &str, input: &AssembledInput, spec: &impl Serialize) -> Result<PathBuf> {
        let spec_hash = hash_text(&serde_json::to_string(spec)?);
        let key = hash_text(&format!(
            "{}\u{0}{}\u{0}{}",
            self.inner.id(),
            input.input_hash(),
            spec_hash
        ));
        Ok(self.dir.join(format!("{kind}-{}.json", &key[..32])))
    }

    fn memo<T: Serialize + DeserializeOwned>(&self, path: &Path, compute: impl FnOnce() -> Result<T>) -> Result<T> {
        if let Ok(text) = std::fs::read_to_string(path) {
            if let Ok(v) = serde_json::from_str(&text) {
                return Ok(v);
            }
            log::warn!("ignoring unreadable cache entry {}", path.display());
        }
        let value = compute()?;
        std::fs::write(path, serde_json::to_string(&value)?).map_err(|e| Error::file(path, e))?;
        Ok(value)
    }
}

impl<B: Backend> Backend for CachedBackend<B> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn tokenizer(&self) -> &dyn Tokenizer {
        self.inner.tokenizer()
    }

    fn layer_count(&self) -> usize {
        self.inner.layer_count()
    }

    fn heads_per_layer(&self) -> usize {
        self.inner.heads_per_layer()
    }

    fn answer_logits(
        &self,
        input: &AssembledInput,
        candidates: &[Label],
        ablation: Option<HeadAblationSpec>,
    ) -> Result<Logits> {
        let path = self.path("logits", input, &(candidates, ablation))?;
        self.memo(&path, || self.inner.answer_logits(input, candidates, ablation))
    }

    fn final_layer_attention(&self, input: &AssembledInput) -> Result<Vec<AttentionMatrix>> {
        let path = self.path("attention", input, &())?;
        self.memo(&path, || self.inner.final_layer_attention(input))
    }

    fn generate(
        &self,
        input: &AssembledInput,
        steering: Option<&SteeringSpec>,
        decode: &DecodeParams,
    ) -> Result<String> {
        let path = self.path("generate", input, &(steering, decode))?;
        self.memo(&path, || self.inner.generate(input, steering, decode))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assemble::{assemble_input, PromptTemplate};
    use crate::backend::{MockBackend, MockFixture, Scenario};
    use crate::instance::Instance;
    use crate::tokenizer::WordTokenizer;

    #[test]
    fn second_call_is_served_from_disk() {
        let inst = Instance::new("c", "a", vec!["b".into(), "c".into()], None).unwrap();
        let asm = assemble_input(&inst, &WordTokenizer, &PromptTemplate::scoring(&inst), None).unwrap();
        let mut fx = MockFixture::new(1, 1);
        fx.scenarios.insert(
            asm.input_hash(),
            Scenario {
                continuation: Some("first".into()),
                ..Default::default()
            },
        );
        let dir = tempfile::tempdir().unwrap();
        let cached = CachedBackend::new(MockBackend::new(fx.clone()), dir.path()).unwrap();
        assert_eq!(cached.generate(&asm, None, &DecodeParams::default()).unwrap(), "first");
        let logits = cached.answer_logits(&asm, &Label::ALL, None).unwrap();

        // A different backend behind the same cache directory sees the stored results.
        fx.scenarios.values_mut().next().unwrap().continuation = Some("second".into());
        let again = CachedBackend::new(MockBackend::new(fx), dir.path()).unwrap();
        assert_eq!(again.generate(&asm, None, &DecodeParams::default()).unwrap(), "first");
        assert_eq!(again.answer_logits(&asm, &Label::ALL, None).unwrap(), logits);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 2);
    }
}
