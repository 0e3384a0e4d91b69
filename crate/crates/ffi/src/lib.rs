//! C ABI over the `ebbs` crate.
//!
//! Every function returns an [`EbbsStatus`]. On failure a message is kept
//! per thread and can be read with [`ebbs_last_error_message`]. Token
//! sequences cross the boundary as JSON arrays of strings; results come
//! back as JSON strings owned by the caller and released with
//! [`ebbs_string_free`].

use std::cell::RefCell;
use std::collections::HashMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use ebbs::cli::OutputLine;
use ebbs::ebbs::{ebbs_decode, EbbsOptions, FinalScore, VotingScheme};
use ebbs::mbr::mbr_select;
use ebbs::metrics::Bleu;
use ebbs::paths::{make_component_scorers, translate, ModelRegistry, TranslationPath};
use ebbs::vocab::TokenRef;
use ebbs::{DecodeConfig, Error, ErrorKind, TokenId};

/// Result code of every exported function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EbbsStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Bad settings, unknown path or language pair.
    Config = 3,
    /// Malformed input, unknown tokens or an unusable registry file.
    Data = 4,
    /// A panic was caught at the boundary.
    Internal = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EbbsVoting {
    TopZSum = 0,
    TotalSum = 1,
    Max = 2,
    ZeroOne = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EbbsFinalScore {
    Tally = 0,
    ComponentMean = 1,
}

/// Decoding settings. Obtain defaults from [`ebbs_decode_config_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct EbbsDecodeConfig {
    pub lower_beam: usize,
    pub upper_beam: usize,
    pub max_len_factor: f64,
    pub max_len_offset: usize,
    pub length_normalize: bool,
}

impl From<EbbsDecodeConfig> for DecodeConfig {
    fn from(c: EbbsDecodeConfig) -> Self {
        DecodeConfig {
            lower_beam: c.lower_beam,
            upper_beam: c.upper_beam,
            max_len_factor: c.max_len_factor,
            max_len_offset: c.max_len_offset,
            length_normalize: c.length_normalize,
        }
    }
}

/// Opaque handle to a loaded model registry.
pub struct EbbsRegistry {
    inner: ModelRegistry,
}

struct Failure {
    status: EbbsStatus,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e.kind() {
            ErrorKind::Config => EbbsStatus::Config,
            ErrorKind::Data => EbbsStatus::Data,
        };
        Failure {
            status,
            message: e.to_string(),
        }
    }
}

impl Failure {
    fn new(status: EbbsStatus, message: impl Into<String>) -> Self {
        Failure {
            status,
            message: message.into(),
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

/// Runs `f`, records any failure and converts panics into `Internal`.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> EbbsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
            EbbsStatus::Ok
        }
        Ok(Err(fail)) => {
            set_last_error(&fail.message);
            fail.status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(&format!("internal error: {msg}"));
            EbbsStatus::Internal
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure::new(EbbsStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

/// # Safety
/// `p` must be null or a NUL-terminated string.
unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    non_null(p, name)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(EbbsStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str, name: &str) -> Result<T, Failure> {
    serde_json::from_str(text).map_err(|e| Failure::new(EbbsStatus::Data, format!("{name}: {e}")))
}

fn to_c_string(text: String) -> Result<*mut c_char, Failure> {
    CString::new(text)
        .map(CString::into_raw)
        .map_err(|_| Failure::new(EbbsStatus::Internal, "output contains a NUL byte"))
}

/// # Safety
/// `out` must be null or valid for a write.
unsafe fn write_out<T>(out: *mut T, value: T, name: &str) -> Result<(), Failure> {
    non_null(out, name)?;
    *out = value;
    Ok(())
}

/// Message of the last failed call on this thread, or null after a
/// successful one. The pointer stays valid until the next call on the same
/// thread.
#[no_mangle]
pub extern "C" fn ebbs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn ebbs_decode_config_default() -> EbbsDecodeConfig {
    let d = DecodeConfig::default();
    EbbsDecodeConfig {
        lower_beam: d.lower_beam,
        upper_beam: d.upper_beam,
        max_len_factor: d.max_len_factor,
        max_len_offset: d.max_len_offset,
        length_normalize: d.length_normalize,
    }
}

/// Loads a registry manifest. Scorer files named in it resolve relative to
/// the manifest's directory.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ebbs_registry_load(path: *const c_char, out: *mut *mut EbbsRegistry) -> EbbsStatus {
    guard(|| {
        non_null(out, "out")?;
        let path = str_arg(path, "path")?;
        let inner = ModelRegistry::load(Path::new(path))?;
        *out = Box::into_raw(Box::new(EbbsRegistry { inner }));
        Ok(())
    })
}

/// # Safety
/// `registry` must be null or a handle from [`ebbs_registry_load`] that has
/// not been freed.
#[no_mangle]
pub unsafe extern "C" fn ebbs_registry_free(registry: *mut EbbsRegistry) {
    if !registry.is_null() {
        drop(Box::from_raw(registry));
    }
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn ebbs_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

struct Request<'a> {
    registry: &'a ModelRegistry,
    src: &'a str,
    tgt: &'a str,
    input: Vec<TokenId>,
    config: DecodeConfig,
}

/// # Safety
/// Pointer arguments as documented on the exported callers.
unsafe fn request<'a>(
    registry: *const EbbsRegistry,
    src: *const c_char,
    tgt: *const c_char,
    input_json: *const c_char,
    config: *const EbbsDecodeConfig,
) -> Result<Request<'a>, Failure> {
    non_null(registry, "registry")?;
    non_null(config, "config")?;
    let registry = &(*registry).inner;
    let tokens: Vec<TokenRef> = parse_json(str_arg(input_json, "input_json")?, "input_json")?;
    let input = registry.vocab().resolve_seq(&tokens)?;
    let config = DecodeConfig::from(*config);
    config.validate()?;
    Ok(Request {
        registry,
        src: str_arg(src, "src")?,
        tgt: str_arg(tgt, "tgt")?,
        input,
        config,
    })
}

fn output_json(req: &Request<'_>, result: &ebbs::DecodeResult) -> Result<*mut c_char, Failure> {
    let line = OutputLine::new(req.registry.vocab(), &req.input, result);
    to_c_string(serde_json::to_string(&line).map_err(|e| Failure::new(EbbsStatus::Internal, e.to_string()))?)
}

/// Translates one input along a single path (`"direct"` or `"pivot:<lang>"`).
/// `input_json` is a JSON array of source tokens. On success `*out_json`
/// receives an object with `src`, `hyp`, `score`, `log_score`, `steps`,
/// `forced_stop` and, for pivots, `intermediate`.
///
/// # Safety
/// All pointers must be valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ebbs_translate(
    registry: *const EbbsRegistry,
    src: *const c_char,
    tgt: *const c_char,
    path: *const c_char,
    input_json: *const c_char,
    config: *const EbbsDecodeConfig,
    out_json: *mut *mut c_char,
) -> EbbsStatus {
    guard(|| {
        non_null(out_json, "out_json")?;
        let req = request(registry, src, tgt, input_json, config)?;
        let path = TranslationPath::parse(str_arg(path, "path")?, req.src, req.tgt)?;
        let result = translate(req.registry, &path, &req.input, &req.config)?;
        write_out(out_json, output_json(&req, &result)?, "out_json")
    })
}

/// Ensemble decoding over a comma-separated list of paths, e.g.
/// `"direct,pivot:en"`. Output format as for [`ebbs_translate`].
///
/// # Safety
/// All pointers must be valid; strings NUL-terminated.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn ebbs_ensemble_decode(
    registry: *const EbbsRegistry,
    src: *const c_char,
    tgt: *const c_char,
    paths: *const c_char,
    input_json: *const c_char,
    config: *const EbbsDecodeConfig,
    voting: EbbsVoting,
    final_score: EbbsFinalScore,
    out_json: *mut *mut c_char,
) -> EbbsStatus {
    guard(|| {
        non_null(out_json, "out_json")?;
        let req = request(registry, src, tgt, input_json, config)?;
        let paths = TranslationPath::parse_list(str_arg(paths, "paths")?, req.src, req.tgt)?;
        let options = EbbsOptions {
            scheme: match voting {
                EbbsVoting::TopZSum => VotingScheme::TopZSum,
                EbbsVoting::TotalSum => VotingScheme::TotalSum,
                EbbsVoting::Max => VotingScheme::Max,
                EbbsVoting::ZeroOne => VotingScheme::ZeroOne,
            },
            final_score: match final_score {
                EbbsFinalScore::Tally => FinalScore::Tally,
                EbbsFinalScore::ComponentMean => FinalScore::ComponentMean,
            },
        };
        let components = make_component_scorers(req.registry, &paths, &req.input, &req.config)?;
        let result = ebbs_decode(&components, &req.input, &req.config, options)?;
        write_out(out_json, output_json(&req, &result)?, "out_json")
    })
}

/// Maps free-form token strings to ids; `<s>` and `</s>` are ids 0 and 1
/// and are ignored by BLEU.
#[derive(Default)]
struct Interner(HashMap<String, TokenId>);

impl Interner {
    fn new() -> Self {
        let mut me = Self::default();
        me.ids(&["<s>".into(), "</s>".into()]);
        me
    }

    fn ids(&mut self, seq: &[String]) -> Vec<TokenId> {
        seq.iter()
            .map(|t| {
                let next = self.0.len() as TokenId;
                *self.0.entry(t.clone()).or_insert(next)
            })
            .collect()
    }
}

/// Sentence BLEU in `[0, 1]` between two JSON arrays of token strings.
/// An empty hypothesis scores 0; an empty reference is a data error.
///
/// # Safety
/// Strings must be NUL-terminated and `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ebbs_sentence_bleu(hyp_json: *const c_char, ref_json: *const c_char, out: *mut f64) -> EbbsStatus {
    guard(|| {
        let hyp: Vec<String> = parse_json(str_arg(hyp_json, "hyp_json")?, "hyp_json")?;
        let reference: Vec<String> = parse_json(str_arg(ref_json, "ref_json")?, "ref_json")?;
        let mut interner = Interner::new();
        let (h, r) = (interner.ids(&hyp), interner.ids(&reference));
        let score = Bleu::new([0, 1]).sentence(&h, &r)?;
        write_out(out, score.score, "out")
    })
}

/// Minimum-Bayes-risk selection over a JSON array of candidates, each an
/// array of token strings.
///
/// # Safety
/// `candidates_json` must be NUL-terminated; `out_index` and `out_utility`
/// valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ebbs_mbr_select(
    candidates_json: *const c_char,
    out_index: *mut usize,
    out_utility: *mut f64,
) -> EbbsStatus {
    guard(|| {
        non_null(out_index, "out_index")?;
        non_null(out_utility, "out_utility")?;
        let candidates: Vec<Vec<String>> = parse_json(str_arg(candidates_json, "candidates_json")?, "candidates_json")?;
        let mut interner = Interner::new();
        let ids: Vec<Vec<TokenId>> = candidates.iter().map(|c| interner.ids(c)).collect();
        let pick = mbr_select(&Bleu::new([0, 1]), &ids)?;
        *out_index = pick.index;
        *out_utility = pick.utility;
        Ok(())
    })
}
