//! C ABI over the platform. Every call returns a `DelibStatus`; results come
//! back as JSON strings the caller releases with `delib_string_free`. After a
//! failure, `delib_last_error` holds the JSON error body for this thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use delib_core::distill::ReportStyle;
use delib_core::ids::{DiscussionId, EventId, SessionId};
use delib_core::reflection::ReflectionEvent;
use delib_core::service::{Command, ErrorBody, ErrorClass, Platform, ServiceConfig, ServiceError};
use delib_core::transcript::TranscriptInput;
use serde::Serialize;

/// Opaque platform handle.
pub struct DelibPlatform {
    inner: Platform,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DelibStatus {
    Ok = 0,
    InvalidArgument = 1,
    NotFound = 2,
    Invariant = 3,
    Conflict = 4,
    Unauthorized = 5,
    Forbidden = 6,
    Upstream = 7,
    Internal = 8,
    Panic = 9,
}

impl From<ErrorClass> for DelibStatus {
    fn from(c: ErrorClass) -> Self {
        match c {
            ErrorClass::Invariant => DelibStatus::Invariant,
            ErrorClass::NotFound => DelibStatus::NotFound,
            ErrorClass::Conflict => DelibStatus::Conflict,
            ErrorClass::Unauthorized => DelibStatus::Unauthorized,
            ErrorClass::Forbidden => DelibStatus::Forbidden,
            ErrorClass::BadRequest => DelibStatus::InvalidArgument,
            ErrorClass::Upstream => DelibStatus::Upstream,
            ErrorClass::Internal => DelibStatus::Internal,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(body: &ErrorBody) {
    let text = serde_json::to_string(body).unwrap_or_else(|_| "{\"error\":\"internal\"}".into());
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn fail(class: ErrorClass, invariant: &str, message: impl Into<String>) -> DelibStatus {
    set_last_error(&ErrorBody { error: class, invariant: invariant.into(), message: message.into() });
    class.into()
}

fn bad_arg(message: impl Into<String>) -> DelibStatus {
    fail(ErrorClass::BadRequest, "ffi.argument", message)
}

/// Runs `f` with panics contained and errors recorded.
fn guard(f: impl FnOnce() -> Result<(), DelibStatus>) -> DelibStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DelibStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_last_error(&ErrorBody { error: ErrorClass::Internal, invariant: "ffi.panic".into(), message: "panic inside the engine".into() });
            DelibStatus::Panic
        }
    }
}

fn service(e: ServiceError) -> DelibStatus {
    let body = e.body();
    let status = body.error.into();
    set_last_error(&body);
    status
}

unsafe fn text<'a>(p: *const c_char, name: &str) -> Result<&'a str, DelibStatus> {
    if p.is_null() {
        return Err(bad_arg(format!("{name} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| bad_arg(format!("{name} is not UTF-8")))
}

unsafe fn handle<'a>(p: *const DelibPlatform) -> Result<&'a Platform, DelibStatus> {
    p.as_ref().map(|h| &h.inner).ok_or_else(|| bad_arg("platform handle is null"))
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), DelibStatus> {
    if out.is_null() {
        return Err(bad_arg("output pointer is null"));
    }
    let c = CString::new(s).map_err(|_| fail(ErrorClass::Internal, "ffi.string", "result contains a NUL byte"))?;
    *out = c.into_raw();
    Ok(())
}

unsafe fn put_json(out: *mut *mut c_char, v: &impl Serialize) -> Result<(), DelibStatus> {
    let s = serde_json::to_string(v).map_err(|e| fail(ErrorClass::Internal, "ffi.json", e.to_string()))?;
    put_string(out, s)
}

fn parse<T: serde::de::DeserializeOwned>(s: &str, what: &str) -> Result<T, DelibStatus> {
    serde_json::from_str(s).map_err(|e| bad_arg(format!("{what}: {e}")))
}

/// Opens a platform. `config_toml` may be null for an in-memory platform with
/// the deterministic mock gateway.
///
/// # Safety
/// `config_toml` is null or a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn delib_platform_open(config_toml: *const c_char, out: *mut *mut DelibPlatform) -> DelibStatus {
    guard(|| {
        if out.is_null() {
            return Err(bad_arg("output pointer is null"));
        }
        let platform = if config_toml.is_null() {
            Platform::in_memory_mock()
        } else {
            let cfg = ServiceConfig::from_toml(text(config_toml, "config_toml")?).map_err(service)?;
            Platform::open(cfg).map_err(service)?
        };
        *out = Box::into_raw(Box::new(DelibPlatform { inner: platform }));
        Ok(())
    })
}

/// # Safety
/// `p` is null or a handle from `delib_platform_open`, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn delib_platform_free(p: *mut DelibPlatform) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// # Safety
/// `s` is null or a string returned by this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn delib_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// JSON error body of the last failed call on this thread, or null. Owned by
/// the library; valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn delib_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn delib_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Sequence number of the last logged record, 0 for a null handle.
///
/// # Safety
/// `p` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn delib_seq(p: *const DelibPlatform) -> u64 {
    p.as_ref().map_or(0, |h| h.inner.seq())
}

/// Applies one command given as `{"kind": ..., "payload": ...}` and returns
/// the outcome JSON.
///
/// # Safety
/// Pointers are valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn delib_execute(p: *const DelibPlatform, command_json: *const c_char, out_json: *mut *mut c_char) -> DelibStatus {
    guard(|| {
        let platform = handle(p)?;
        let cmd: Command = parse(text(command_json, "command_json")?, "command")?;
        put_json(out_json, &platform.execute(&cmd).map_err(service)?)
    })
}

/// # Safety
/// Pointers are valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn delib_create_discussion(
    p: *const DelibPlatform,
    title: *const c_char,
    focal_question: *const c_char,
    author: *const c_char,
    out_id: *mut *mut c_char,
) -> DelibStatus {
    guard(|| {
        let platform = handle(p)?;
        let id = platform
            .create_discussion(text(title, "title")?, text(focal_question, "focal_question")?, text(author, "author")?)
            .map_err(service)?;
        put_string(out_id, id.0)
    })
}

/// Uploads a transcript (`{event_title, language, segments}`) and opens an
/// import session into `discussion_id`. Returns `{transcript_id, session_id}`.
///
/// # Safety
/// Pointers are valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn delib_ingest_transcript(
    p: *const DelibPlatform,
    transcript_json: *const c_char,
    discussion_id: *const c_char,
    actor: *const c_char,
    out_json: *mut *mut c_char,
) -> DelibStatus {
    guard(|| {
        let platform = handle(p)?;
        let input = TranscriptInput::from_json(text(transcript_json, "transcript_json")?.as_bytes()).map_err(|e| service(e.into()))?;
        let t = platform.upload_transcript(input).map_err(service)?;
        let s = platform.start_import(&t, &DiscussionId::from(text(discussion_id, "discussion_id")?), text(actor, "actor")?).map_err(service)?;
        put_json(out_json, &serde_json::json!({ "transcript_id": t, "session_id": s }))
    })
}

/// Runs the classifier over an uploaded session; returns the session JSON.
///
/// # Safety
/// Pointers are valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn delib_analyze(p: *const DelibPlatform, session_id: *const c_char, actor: *const c_char, out_json: *mut *mut c_char) -> DelibStatus {
    guard(|| {
        let platform = handle(p)?;
        let s = platform.analyze(&SessionId::from(text(session_id, "session_id")?), text(actor, "actor")?).map_err(service)?;
        put_json(out_json, &s)
    })
}

/// # Safety
/// Pointers are valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn delib_clusters(p: *const DelibPlatform, discussion_id: *const c_char, k: u32, out_json: *mut *mut c_char) -> DelibStatus {
    guard(|| {
        let platform = handle(p)?;
        put_json(out_json, &platform.clusters(&DiscussionId::from(text(discussion_id, "discussion_id")?), k as usize).map_err(service)?)
    })
}

/// Distills and records recommendations at `k`. A negative threshold selects
/// the default.
///
/// # Safety
/// Pointers are valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn delib_distill(
    p: *const DelibPlatform,
    discussion_id: *const c_char,
    k: u32,
    threshold: f64,
    out_json: *mut *mut c_char,
) -> DelibStatus {
    guard(|| {
        let platform = handle(p)?;
        let threshold = (threshold >= 0.0).then_some(threshold);
        let recs = platform.distill(&DiscussionId::from(text(discussion_id, "discussion_id")?), k as usize, threshold).map_err(service)?;
        put_json(out_json, &recs)
    })
}

/// `style` is executive, analytical or narrative. With `markdown` nonzero the
/// result is Markdown rather than JSON.
///
/// # Safety
/// Pointers are valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn delib_report(
    p: *const DelibPlatform,
    discussion_id: *const c_char,
    style: *const c_char,
    markdown: i32,
    out: *mut *mut c_char,
) -> DelibStatus {
    guard(|| {
        let platform = handle(p)?;
        let style: ReportStyle = text(style, "style")?.parse().map_err(|e: String| bad_arg(e))?;
        let r = platform.report(&DiscussionId::from(text(discussion_id, "discussion_id")?), style).map_err(service)?;
        if markdown != 0 {
            put_string(out, r.to_markdown())
        } else {
            put_json(out, &r)
        }
    })
}

/// Records one reflection `{event_id, participant, card_id, t_ms}`; returns
/// admission, alerts and drafted prompts.
///
/// # Safety
/// Pointers are valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn delib_reflect(p: *const DelibPlatform, event_json: *const c_char, out_json: *mut *mut c_char) -> DelibStatus {
    guard(|| {
        let platform = handle(p)?;
        let e: ReflectionEvent = parse(text(event_json, "event_json")?, "reflection")?;
        put_json(out_json, &platform.reflect(e).map_err(service)?)
    })
}

/// Audience snapshot when `facilitator` is zero, facilitator snapshot otherwise.
///
/// # Safety
/// Pointers are valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn delib_event_snapshot(
    p: *const DelibPlatform,
    event_id: *const c_char,
    facilitator: i32,
    out_json: *mut *mut c_char,
) -> DelibStatus {
    guard(|| {
        let platform = handle(p)?;
        let id = EventId::from(text(event_id, "event_id")?);
        if facilitator != 0 {
            put_json(out_json, &platform.facilitator_snapshot(&id).map_err(service)?)
        } else {
            put_json(out_json, &platform.public_snapshot(&id).map_err(service)?)
        }
    })
}

/// Integrity violations as a JSON array of strings; empty when clean.
///
/// # Safety
/// Pointers are valid.
#[no_mangle]
pub unsafe extern "C" fn delib_verify(p: *const DelibPlatform, out_json: *mut *mut c_char) -> DelibStatus {
    guard(|| {
        let platform = handle(p)?;
        put_json(out_json, &platform.verify())
    })
}
