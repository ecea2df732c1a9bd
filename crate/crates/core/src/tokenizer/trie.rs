use std::collections::BTreeMap;

use super::SemanticTable;
use crate::dataset::ItemIdx;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct Node {
    children: BTreeMap<usize, usize>,
    item: Option<ItemIdx>,
}

/// Prefix index over every semantic ID in a table. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrefixTrie {
    nodes: Vec<Node>,
    depth: usize,
    leaves: usize,
}

impl PrefixTrie {
    pub fn build(table: &SemanticTable) -> Self {
        let mut nodes = vec![Node::default()];
        for (item, id) in table.ids().iter().enumerate() {
            let mut cur = 0;
            for &code in id.codes() {
                cur = match nodes[cur].children.get(&code) {
                    Some(&next) => next,
                    None => {
                        nodes.push(Node::default());
                        let next = nodes.len() - 1;
                        nodes[cur].children.insert(code, next);
                        next
                    }
                };
            }
            nodes[cur].item = Some(item);
        }
        Self {
            nodes,
            depth: table.depth(),
            leaves: table.len(),
        }
    }

    fn walk(&self, prefix: &[usize]) -> Option<usize> {
        prefix
            .iter()
            .try_fold(0, |cur, code| self.nodes[cur].children.get(code).copied())
    }

    /// Codes that extend `prefix` along a live path, ascending.
    pub fn valid_next(&self, prefix: &[usize]) -> Vec<usize> {
        if prefix.len() >= self.depth {
            return Vec::new();
        }
        self.walk(prefix)
            .map(|n| self.nodes[n].children.keys().copied().collect())
            .unwrap_or_default()
    }

    pub fn ground(&self, codes: &[usize]) -> Option<ItemIdx> {
        if codes.len() != self.depth {
            return None;
        }
        self.walk(codes).and_then(|n| self.nodes[n].item)
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::SemanticId;

    fn two_items() -> PrefixTrie {
        let table =
            SemanticTable::from_ids(vec![SemanticId(vec![1, 2]), SemanticId(vec![1, 3])], 10)
                .unwrap();
        PrefixTrie::build(&table)
    }

    #[test]
    fn valid_next_and_ground() {
        let trie = two_items();
        assert_eq!(trie.valid_next(&[]), vec![1]);
        assert_eq!(trie.valid_next(&[1]), vec![2, 3]);
        assert!(trie.valid_next(&[9]).is_empty());
        assert!(trie.valid_next(&[1, 2]).is_empty());
        assert_eq!(trie.ground(&[1, 2]), Some(0));
        assert_eq!(trie.ground(&[1, 3]), Some(1));
        assert_eq!(trie.ground(&[2, 2]), None);
        assert_eq!(trie.ground(&[1]), None);
        assert_eq!(trie.leaf_count(), 2);
    }
}
