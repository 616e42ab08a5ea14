use std::collections::HashSet;
use std::io::Read;

use serde::{Deserialize, Serialize};

use bodyaffect::quality::GoldSet;

use crate::ServiceError;

/// One clip the service can hand out. Media is referenced, never served.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolItem {
    pub instance_id: String,
    pub media_url: String,
    pub frames: u32,
}

/// Reads `instance_id,media_url,frames` rows.
pub fn read_pool<R: Read>(r: R) -> Result<Vec<PoolItem>, ServiceError> {
    let mut rdr = csv::Reader::from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if header != ["instance_id", "media_url", "frames"] {
        return Err(ServiceError::Pool("header must be instance_id,media_url,frames".into()));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let f: Vec<&str> = rec.iter().map(str::trim).collect();
        let frames = f[2].parse().map_err(|_| ServiceError::Pool(format!("row {}: bad frame count `{}`", i + 1, f[2])))?;
        if f[0].is_empty() {
            return Err(ServiceError::Pool(format!("row {}: empty instance_id", i + 1)));
        }
        out.push(PoolItem { instance_id: f[0].to_string(), media_url: f[1].to_string(), frames });
    }
    Ok(out)
}

/// Task instances plus control instances; a pool item is a control iff the
/// gold set has an entry for it.
#[derive(Debug, Clone)]
pub struct Pool {
    pub tasks: Vec<PoolItem>,
    pub controls: Vec<PoolItem>,
    pub gold: GoldSet,
}

impl Pool {
    pub fn new(items: Vec<PoolItem>, gold: GoldSet, session_size: usize) -> Result<Pool, ServiceError> {
        let mut seen = HashSet::new();
        for it in &items {
            if !seen.insert(it.instance_id.as_str()) {
                return Err(ServiceError::Pool(format!("duplicate instance `{}`", it.instance_id)));
            }
        }
        if let Some(g) = gold.controls.iter().find(|g| !seen.contains(g.instance_id.as_str())) {
            return Err(ServiceError::Pool(format!("control `{}` missing from the pool", g.instance_id)));
        }
        let (controls, tasks): (Vec<_>, Vec<_>) = items.into_iter().partition(|it| gold.is_control(&it.instance_id));
        if controls.is_empty() {
            return Err(ServiceError::Pool("no control instances".into()));
        }
        if tasks.len() < session_size {
            return Err(ServiceError::Pool(format!("{} task instances, sessions need {session_size}", tasks.len())));
        }
        Ok(Pool { tasks, controls, gold })
    }

    pub fn item(&self, instance_id: &str) -> Option<&PoolItem> {
        self.tasks.iter().chain(&self.controls).find(|it| it.instance_id == instance_id)
    }
}
