//! C ABI over the `bgprtt` library.
//!
//! Every function returns a [`BgprttStatus`]. On failure a message is kept
//! per thread and can be read with [`bgprtt_last_error_message`]. Objects
//! handed out through `out` pointers are owned by the caller and must be
//! released with the matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::net::Ipv4Addr;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use bgprtt::aggregate::correlation_score;
use bgprtt::changepoint::{elbow_select, optimal_partitioning, pelt, Segmentation};
use bgprtt::ingest;
use bgprtt::pipeline::{run_pair, PairKey};
use bgprtt::validate::PrefixTable;
use bgprtt::{MatchReport, Params, Timestamp};

/// Result codes shared by every exported function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BgprttStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

/// Message describing the most recent failure on this thread, or null.
///
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn bgprtt_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

struct Failure(BgprttStatus, String);

impl From<bgprtt::Error> for Failure {
    fn from(e: bgprtt::Error) -> Self {
        let status = match &e {
            bgprtt::Error::Io { .. } => BgprttStatus::Io,
            bgprtt::Error::Format { .. } | bgprtt::Error::Csv(_) | bgprtt::Error::Json(_) => BgprttStatus::Format,
            _ => BgprttStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure(BgprttStatus::InvalidArgument, message.into())
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> BgprttStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => BgprttStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            BgprttStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(BgprttStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

unsafe fn slice<'a, T>(data: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(data, what)?;
    Ok(std::slice::from_raw_parts(data, len))
}

unsafe fn string<'a>(s: *const c_char, what: &str) -> Result<&'a str, Failure> {
    non_null(s, what)?;
    CStr::from_ptr(s).to_str().map_err(|_| invalid(format!("{what} is not UTF-8")))
}

/// Workflow parameters. `window_start = 0` and `window_end = UINT64_MAX`
/// mean unbounded.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BgprttParams {
    pub window_start: u64,
    pub window_end: u64,
    pub time_shift: i64,
    pub elbow_slope_threshold: f64,
    pub tolerance_window: u64,
    pub penalty_base: f64,
    pub penalty_offset: f64,
    pub initial_penalty: f64,
    pub rtt_period: u64,
}

impl From<&Params> for BgprttParams {
    fn from(p: &Params) -> Self {
        let (start, end) = p.window();
        Self {
            window_start: start.0,
            window_end: end.0,
            time_shift: p.time_shift,
            elbow_slope_threshold: p.elbow_slope_threshold,
            tolerance_window: p.tolerance_window,
            penalty_base: p.penalty_base,
            penalty_offset: p.penalty_offset,
            initial_penalty: p.initial_penalty,
            rtt_period: p.rtt_period,
        }
    }
}

impl BgprttParams {
    fn to_params(self) -> Result<Params, Failure> {
        let p = Params {
            window_start: (self.window_start != 0).then_some(Timestamp(self.window_start)),
            window_end: (self.window_end != u64::MAX).then_some(Timestamp(self.window_end)),
            time_shift: self.time_shift,
            elbow_slope_threshold: self.elbow_slope_threshold,
            tolerance_window: self.tolerance_window,
            penalty_base: self.penalty_base,
            penalty_offset: self.penalty_offset,
            initial_penalty: self.initial_penalty,
            rtt_period: self.rtt_period,
        };
        p.validate()?;
        Ok(p)
    }
}

unsafe fn params_or_default(params: *const BgprttParams) -> Result<Params, Failure> {
    if params.is_null() {
        Ok(Params::default())
    } else {
        (*params).to_params()
    }
}

/// Fills `out` with the default parameters.
///
/// # Safety
/// `out` must be null or point to writable memory for one `BgprttParams`.
#[no_mangle]
pub unsafe extern "C" fn bgprtt_params_default(out: *mut BgprttParams) -> BgprttStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = BgprttParams::from(&Params::default());
        Ok(())
    })
}

unsafe fn write_segmentation(
    seg: Segmentation,
    out_indices: *mut usize,
    capacity: usize,
    out_count: *mut usize,
    out_cost: *mut f64,
) -> Result<(), Failure> {
    non_null(out_count, "out_count")?;
    *out_count = seg.changepoint_indices.len();
    if !out_cost.is_null() {
        *out_cost = seg.total_cost;
    }
    if seg.changepoint_indices.len() > capacity {
        return Err(Failure(
            BgprttStatus::BufferTooSmall,
            format!("{} changepoints do not fit in {capacity} slots", seg.changepoint_indices.len()),
        ));
    }
    if !seg.changepoint_indices.is_empty() {
        non_null(out_indices, "out_indices")?;
        ptr::copy_nonoverlapping(seg.changepoint_indices.as_ptr(), out_indices, seg.changepoint_indices.len());
    }
    Ok(())
}

/// Optimal changepoints of `values` under `penalty`, found with PELT.
///
/// Writes the number of changepoints to `out_count` and, when it fits in
/// `capacity`, their indices to `out_indices`. Otherwise returns
/// `BGPRTT_STATUS_BUFFER_TOO_SMALL` with `out_count` still set.
/// `out_cost` may be null.
///
/// # Safety
/// `values` must point to `len` doubles; `out_indices` to `capacity` slots.
#[no_mangle]
pub unsafe extern "C" fn bgprtt_pelt(
    values: *const f64,
    len: usize,
    penalty: f64,
    out_indices: *mut usize,
    capacity: usize,
    out_count: *mut usize,
    out_cost: *mut f64,
) -> BgprttStatus {
    guard(|| {
        let v = slice(values, len, "values")?;
        write_segmentation(pelt(v, penalty)?, out_indices, capacity, out_count, out_cost)
    })
}

/// As [`bgprtt_pelt`], using the unpruned quadratic dynamic program.
///
/// # Safety
/// Same contract as [`bgprtt_pelt`].
#[no_mangle]
pub unsafe extern "C" fn bgprtt_optimal_partitioning(
    values: *const f64,
    len: usize,
    penalty: f64,
    out_indices: *mut usize,
    capacity: usize,
    out_count: *mut usize,
    out_cost: *mut f64,
) -> BgprttStatus {
    guard(|| {
        let v = slice(values, len, "values")?;
        write_segmentation(optimal_partitioning(v, penalty)?, out_indices, capacity, out_count, out_cost)
    })
}

/// Penalty chosen by the elbow rule. `params` may be null for defaults.
///
/// # Safety
/// `values` must point to `len` doubles and `out_penalty` to one double.
#[no_mangle]
pub unsafe extern "C" fn bgprtt_elbow_select(
    values: *const f64,
    len: usize,
    params: *const BgprttParams,
    out_penalty: *mut f64,
) -> BgprttStatus {
    guard(|| {
        non_null(out_penalty, "out_penalty")?;
        let v = slice(values, len, "values")?;
        let (penalty, _) = elbow_select(v, &params_or_default(params)?)?;
        *out_penalty = penalty;
        Ok(())
    })
}

/// One minus the mean of `factors`, each of which must lie in [0, 1].
///
/// # Safety
/// `factors` must point to `len` doubles and `out` to one double.
#[no_mangle]
pub unsafe extern "C" fn bgprtt_correlation_score(factors: *const f64, len: usize, out: *mut f64) -> BgprttStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = correlation_score(slice(factors, len, "factors")?)?;
        Ok(())
    })
}

/// Match report of one probe / collector-peer pair.
pub struct BgprttReport(MatchReport);

/// Correlates one pair from an RTT file and a BGP file.
///
/// `target` is a dotted IPv4 address and `prefix` a CIDR string. `params`
/// may be null for defaults. On success `*out` receives a report to be
/// released with [`bgprtt_report_free`].
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bgprtt_run_pair(
    rtt_path: *const c_char,
    bgp_path: *const c_char,
    probe_id: *const c_char,
    cp_id: *const c_char,
    target: *const c_char,
    prefix: *const c_char,
    params: *const BgprttParams,
    out: *mut *mut BgprttReport,
) -> BgprttStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let key = PairKey {
            probe_id: string(probe_id, "probe_id")?.to_string(),
            cp_id: string(cp_id, "cp_id")?.to_string(),
            target: string(target, "target")?.parse().map_err(|e| invalid(format!("target: {e}")))?,
            prefix: string(prefix, "prefix")?.parse().map_err(|e| invalid(format!("prefix: {e}")))?,
        };
        let params = params_or_default(params)?;
        let report = run_pair(string(rtt_path, "rtt_path")?, string(bgp_path, "bgp_path")?, &key, &params)?;
        *out = Box::into_raw(Box::new(BgprttReport(report)));
        Ok(())
    })
}

/// Correlation factor of the report; NaN for a null report.
///
/// # Safety
/// `report` must be null or a live report.
#[no_mangle]
pub unsafe extern "C" fn bgprtt_report_factor(report: *const BgprttReport) -> f64 {
    report.as_ref().map_or(f64::NAN, |r| r.0.correlation_factor)
}

/// Number of valid updates in the report.
///
/// # Safety
/// `report` must be null or a live report.
#[no_mangle]
pub unsafe extern "C" fn bgprtt_report_update_count(report: *const BgprttReport) -> usize {
    report.as_ref().map_or(0, |r| r.0.entries.len())
}

/// Number of valid updates matched to a changepoint.
///
/// # Safety
/// `report` must be null or a live report.
#[no_mangle]
pub unsafe extern "C" fn bgprtt_report_matched_count(report: *const BgprttReport) -> usize {
    report.as_ref().map_or(0, |r| r.0.matched_count())
}

/// True when the pair had no valid updates.
///
/// # Safety
/// `report` must be null or a live report.
#[no_mangle]
pub unsafe extern "C" fn bgprtt_report_insufficient_data(report: *const BgprttReport) -> bool {
    report.as_ref().is_none_or(|r| r.0.insufficient_data)
}

/// Serializes the report as JSON into a string freed with [`bgprtt_string_free`].
///
/// # Safety
/// `report` must be a live report and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bgprtt_report_to_json(report: *const BgprttReport, out: *mut *mut c_char) -> BgprttStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let r = report.as_ref().ok_or_else(|| Failure(BgprttStatus::NullPointer, "report is null".into()))?;
        let json = serde_json::to_string(&r.0).map_err(|e| Failure(BgprttStatus::Format, e.to_string()))?;
        *out = CString::new(json).map_err(|e| invalid(e.to_string()))?.into_raw();
        Ok(())
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn bgprtt_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Releases a report. Null is ignored.
///
/// # Safety
/// `report` must come from [`bgprtt_run_pair`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn bgprtt_report_free(report: *mut BgprttReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Longest-prefix-match table of elected prefix origins.
pub struct BgprttPrefixTable(PrefixTable);

/// Loads a prefix-origin CSV and an optional IXP list (`ixp_path` may be null).
///
/// # Safety
/// Paths must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bgprtt_prefix_table_load(
    csv_path: *const c_char,
    ixp_path: *const c_char,
    probe_as: u32,
    out: *mut *mut BgprttPrefixTable,
) -> BgprttStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let rows = ingest::read_prefix_table(string(csv_path, "csv_path")?)?;
        let ixps = if ixp_path.is_null() { Vec::new() } else { ingest::read_ixp_list(string(ixp_path, "ixp_path")?)? };
        *out = Box::into_raw(Box::new(BgprttPrefixTable(PrefixTable::new(&rows, ixps, probe_as))));
        Ok(())
    })
}

/// Origin AS of the most specific prefix containing `address`, given in
/// host byte order (`0xC0000201` is 192.0.2.1). Writes 0 when no prefix matches.
///
/// # Safety
/// `table` must be a live table and `out_asn` writable.
#[no_mangle]
pub unsafe extern "C" fn bgprtt_prefix_table_origin(
    table: *const BgprttPrefixTable,
    address: u32,
    out_asn: *mut u32,
) -> BgprttStatus {
    guard(|| {
        non_null(out_asn, "out_asn")?;
        let t = table.as_ref().ok_or_else(|| Failure(BgprttStatus::NullPointer, "table is null".into()))?;
        *out_asn = t.0.origin_of(Ipv4Addr::from(address));
        Ok(())
    })
}

/// Releases a prefix table. Null is ignored.
///
/// # Safety
/// `table` must come from [`bgprtt_prefix_table_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn bgprtt_prefix_table_free(table: *mut BgprttPrefixTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}
