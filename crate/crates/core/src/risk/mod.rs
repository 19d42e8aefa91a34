//! Signature calls, forecasts, Basel overlap, duty gaps, dilution and the
//! ranked watchlist built from them.

mod basel;
mod forecast;
mod report;
mod signature;
mod tariff;
mod watchlist;

pub use basel::{basel_overlap, BaselInfo, BaselTable, Y48};
pub use forecast::{forecast_linear, Forecast, ForecastPoint, DEFAULT_HORIZON};
pub use report::{
    code_chart_svg, render_report, segment_scatter_svg, ReportFormat, ScatterPoint,
    WATCHLIST_CSV_HEADER,
};
pub use signature::{detect_signature_codes, signature_call, SignatureCall, StrongThresholds};
pub use tariff::{
    dilution_model, duty_gap, DilutionOutcome, DilutionScenario, DutyGap, RateBand, TariffTable,
};
pub use watchlist::{
    build_watchlist, DutyContext, RankKey, Watchlist, WatchlistEntry, WatchlistInputs,
    WATCHLIST_SCHEMA_VERSION,
};
