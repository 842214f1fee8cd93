//! Trains briefly, saves a checkpoint, reloads it and checks that the
//! reloaded model forecasts the same bits.

use aqc::model::{Model, ModelConfig};
use aqc::synthetic::{generate, SyntheticConfig};
use aqc::train::{train_loop, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (ds, _) = generate(&SyntheticConfig { steps: 120, ..Default::default() })?;
    let graph = ds.graph()?;
    let split = ds.split(24, 24, (7, 1, 2))?;
    let mut model = Model::new(ModelConfig { latent_dim: 8, gru_hidden: 16, ..Default::default() }, &graph)?;
    let report = train_loop(&mut model, &split, &TrainConfig { max_epochs: 2, ..Default::default() }, None)?;
    println!("trained {} epochs, best val MAE {:.4}", report.epochs.len(), report.epochs[report.best_epoch].val_mae);

    let dir = std::env::temp_dir().join(format!("aqc-checkpoint-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("model.json");
    model.save(&path)?;
    let size = std::fs::metadata(&path)?.len();
    println!("saved {} ({size} bytes)", path.display());

    let back = Model::load(&path, Some(&graph))?;
    let same = split.test.iter().all(|w| {
        let (a, b) = (model.predict(w).unwrap(), back.predict(w).unwrap());
        a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
    });
    println!("reloaded forecasts bitwise identical: {same}");
    std::fs::remove_dir_all(&dir).ok();
    Ok(())
}
