use chrono::{DateTime, Utc};
use chrono_tz::Tz;

use crate::registry::ToolError;

/// Renders `instant` in an IANA zone: `2024-07-01 20:00:00 +08:00`, or with a
/// literal `UTC` suffix for the UTC zone itself.
pub fn tz_now(zone: &str, instant: DateTime<Utc>) -> Result<String, ToolError> {
    let zone = zone.trim();
    let tz: Tz = zone
        .parse()
        .map_err(|_| ToolError::Failed(format!("unknown time zone {zone:?}")))?;
    let local = instant.with_timezone(&tz);
    if zone.eq_ignore_ascii_case("utc") {
        Ok(local.format("%Y-%m-%d %H:%M:%S UTC").to_string())
    } else {
        Ok(local.format("%Y-%m-%d %H:%M:%S %:z").to_string())
    }
}
