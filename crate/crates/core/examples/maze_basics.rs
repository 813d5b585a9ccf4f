//! The canonical maze: layout, deterministic steps, and what a uniform
//! policy achieves from each start.

use offrail::harness::protocol::success_rate;
use offrail::{canonical_maze, Action, MazeState, PolicyTable};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> offrail::Result<()> {
    let world = canonical_maze();
    print!("{}", world.to_layout());
    let clean = world.clean_start()?;
    let misleading = world.misleading_start()?;
    println!(
        "horizon {}  clean start {clean}  misleading start {misleading}  junction {}  goal {}",
        world.horizon(),
        world.junction()?,
        world.goal()
    );
    println!(
        "shortest paths: clean {:?}, misleading {:?}",
        world.shortest_path_len(clean, world.goal()),
        world.shortest_path_len(misleading, world.goal())
    );

    // Moves into walls or off the grid cost a step and leave the cell unchanged.
    let s = MazeState::at(clean);
    for a in [Action::N, Action::W, Action::SW] {
        println!("{a} from {clean} -> {}", world.step(s, a)?.cell);
    }

    let uniform = PolicyTable::uniform(world.num_keys(), 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for (name, cell) in [("clean", clean), ("misleading", misleading)] {
        let p = success_rate(&world, &uniform, MazeState::at(cell), 10_000, &mut rng)?;
        println!("uniform policy success from the {name} start: {p:.4}");
    }
    let t = world.rollout(&uniform, MazeState::at(clean), &mut rng)?;
    println!("one uniform rollout: {} moves, reward {}", t.len(), t.reward());
    Ok(())
}
