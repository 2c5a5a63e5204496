use std::path::Path;

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::features::FeatureDims;
use crate::model::{DifndModel, CHECKPOINT_GROUPS};

const FINGERPRINT: &str = "fingerprint.txt";
const CONFIG: &str = "config.toml";
const DIMS: &str = "dims.json";
const SCHEDULE: &str = "diffusion/schedule.json";

/// Layout: one `<group>.safetensors` per module group (`compressor`,
/// `diffusion/denoiser`, `diffusion/refiner`, `fusion/td`, `fusion/mm`,
/// `fusion/heads`), `diffusion/schedule.json`, the config, its fingerprint
/// and the feature dimensions the model was built for.
pub fn save_checkpoint(model: &DifndModel, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    model.store.save_groups(dir, &CHECKPOINT_GROUPS)?;
    let write = |name: &str, body: String| -> Result<()> {
        let path = dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))
    };
    if let Some(entry) = model.schedule_entry() {
        write(SCHEDULE, serde_json::to_string_pretty(&entry)?)?;
    }
    write(CONFIG, model.cfg.to_toml()?)?;
    write(FINGERPRINT, format!("{}\n", model.cfg.fingerprint()))?;
    write(DIMS, serde_json::to_string_pretty(&model.dims)?)?;
    Ok(())
}

pub fn checkpoint_fingerprint(dir: &Path) -> Result<String> {
    let path = dir.join(FINGERPRINT);
    let s = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(s.trim().to_string())
}

/// Rebuilds the model for `cfg` and loads the stored weights. The stored
/// fingerprint must equal `cfg.fingerprint()`.
pub fn load_checkpoint(dir: &Path, cfg: &TrainConfig) -> Result<DifndModel> {
    let found = checkpoint_fingerprint(dir)?;
    let expected = cfg.fingerprint();
    if found != expected {
        return Err(Error::FingerprintMismatch { expected, found });
    }
    let path = dir.join(DIMS);
    let dims: FeatureDims = serde_json::from_str(&std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?)?;
    let model = DifndModel::new(cfg, dims)?;
    model.store.load_dir(dir)?;
    Ok(model)
}

/// The config stored next to the weights.
pub fn checkpoint_config(dir: &Path) -> Result<TrainConfig> {
    TrainConfig::load(&dir.join(CONFIG))
}
