//! Steps through the standard curriculum, raising the keypoint share of
//! the masked patches stage by stage.

mod support;

use keypoint_attention::masking::{schedule_masks, CurriculumSchedule, CurriculumStage};
use keypoint_attention::patch::{assign_keypoints, PatchGrid};
use keypoint_attention::sift::{detect_keypoints, SiftParams};

fn main() {
    let img = support::dotted(128);
    let grid = PatchGrid::new(128, 128, 8).unwrap();
    let stats = assign_keypoints(&grid, &detect_keypoints(&img, &SiftParams::default())).unwrap();
    println!("{} keypoint patches of {}", stats.counts().iter().filter(|&&t| t > 0).count(), grid.len());

    let schedule = CurriculumSchedule::standard(0.25).unwrap();
    for round in (0..schedule.total_rounds() + 10).step_by(5) {
        let plan = schedule_masks(&stats, &schedule, round, 42).unwrap();
        let keys = plan.masked.iter().filter(|&&j| stats.is_keypoint(j)).count();
        println!(
            "round {round:>2} stage {} beta {:.1}: {keys:>2}/{} keypoint patches masked{}",
            schedule.stage_for_round(round),
            schedule.beta_for_round(round),
            plan.len(),
            if plan.shortfall { " (backfilled)" } else { "" }
        );
    }

    let custom = CurriculumSchedule::new(0.5, vec![CurriculumStage { beta: 0.0, rounds: 2 }, CurriculumStage { beta: 1.0, rounds: 2 }]).unwrap();
    for round in 0..4 {
        println!("custom round {round}: beta {}", custom.beta_for_round(round));
    }
}
