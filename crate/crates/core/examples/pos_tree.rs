//! A POS-tree's shape depends only on its contents: two insertion orders
//! give the same root.

use glassdb::postree::{ChunkConfig, Entry, MemStore, PosTree, TreeRoot};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let entries: Vec<Entry> = (0..2000).map(|i| Entry::new(format!("key{i:05}"), format!("value {i}"))).collect();
    let tree = PosTree::new(MemStore::shared(), ChunkConfig::default());
    let batch = tree.build(&entries)?;

    let mut shuffled = entries.clone();
    shuffled.shuffle(&mut StdRng::seed_from_u64(1));
    let mut root = TreeRoot::empty();
    for part in shuffled.chunks(97) {
        let mut part = part.to_vec();
        part.sort_by(|a, b| a.key.cmp(&b.key));
        root = tree.update(&root, &part)?;
    }
    println!("batch build  {}", batch.root_hash);
    println!("incremental  {}", root.root_hash);
    println!("same root: {}, height {}", batch == root, tree.height(&root)?);

    let found = tree.get(&root, b"key01234")?.map(|e| String::from_utf8_lossy(&e.value).into_owned());
    println!("key01234 -> {found:?}");
    Ok(())
}
