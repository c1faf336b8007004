//! Zhang–Shasha ordered tree edit distance with unit costs.

use crate::corpus::SyntaxTree;

/// Post-order labels and the post-order index of each node's leftmost leaf.
struct Indexed<'a> {
    labels: Vec<&'a str>,
    leftmost: Vec<usize>,
}

impl<'a> Indexed<'a> {
    fn new(tree: &'a SyntaxTree) -> Self {
        let mut ix = Self { labels: Vec::new(), leftmost: Vec::new() };
        ix.visit(tree);
        ix
    }

    fn visit(&mut self, t: &'a SyntaxTree) -> usize {
        let mut first_leaf = None;
        for c in &t.children {
            let l = self.visit(c);
            first_leaf.get_or_insert(l);
        }
        let me = self.labels.len();
        self.labels.push(&t.label);
        self.leftmost.push(first_leaf.unwrap_or(me));
        self.leftmost[me]
    }

    /// Nodes with no later node sharing their leftmost leaf.
    fn keyroots(&self) -> Vec<usize> {
        let n = self.labels.len();
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for i in (0..n).rev() {
            let l = self.leftmost[i];
            if !seen[l] {
                seen[l] = true;
                out.push(i);
            }
        }
        out.sort_unstable();
        out
    }
}

pub fn tree_edit_distance(a: &SyntaxTree, b: &SyntaxTree) -> usize {
    let (ta, tb) = (Indexed::new(a), Indexed::new(b));
    let (n, m) = (ta.labels.len(), tb.labels.len());
    let mut td = vec![vec![0usize; m]; n];
    let mut fd = vec![vec![0usize; m + 1]; n + 1];
    for &i in &ta.keyroots() {
        for &j in &tb.keyroots() {
            let (li, lj) = (ta.leftmost[i], tb.leftmost[j]);
            let (rows, cols) = (i - li + 2, j - lj + 2);
            for x in 0..rows {
                for y in 0..cols {
                    fd[x][y] = 0;
                }
            }
            for x in 1..rows {
                fd[x][0] = fd[x - 1][0] + 1;
            }
            for y in 1..cols {
                fd[0][y] = fd[0][y - 1] + 1;
            }
            for x in 1..rows {
                for y in 1..cols {
                    let (ni, nj) = (li + x - 1, lj + y - 1);
                    let del = fd[x - 1][y] + 1;
                    let ins = fd[x][y - 1] + 1;
                    if ta.leftmost[ni] == li && tb.leftmost[nj] == lj {
                        let rename = fd[x - 1][y - 1] + usize::from(ta.labels[ni] != tb.labels[nj]);
                        fd[x][y] = del.min(ins).min(rename);
                        td[ni][nj] = fd[x][y];
                    } else {
                        let (px, py) = (ta.leftmost[ni] - li, tb.leftmost[nj] - lj);
                        fd[x][y] = del.min(ins).min(fd[px][py] + td[ni][nj]);
                    }
                }
            }
        }
    }
    td[n - 1][m - 1]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_bracketed_tree;

    fn t(s: &str) -> SyntaxTree {
        parse_bracketed_tree(s).unwrap()
    }

    #[test]
    fn textbook_pair() {
        // f(d(a c(b)) e) vs f(c(d(a b)) e): two edits.
        let a = t("(f (d (a ) (c (b ))) (e ))");
        let b = t("(f (c (d (a ) (b ))) (e ))");
        assert_eq!(tree_edit_distance(&a, &b), 2);
    }

    #[test]
    fn small_cases() {
        assert_eq!(tree_edit_distance(&t("(A )"), &t("(A )")), 0);
        assert_eq!(tree_edit_distance(&t("(A )"), &t("(B )")), 1);
        assert_eq!(tree_edit_distance(&t("(A (B ))"), &t("(A )")), 1);
        assert_eq!(tree_edit_distance(&t("(A (B ) (C ))"), &t("(A (C ) (B ))")), 2);
    }
}
