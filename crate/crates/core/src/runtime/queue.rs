//! The in-order task queue. Not synchronized by itself: the runtime keeps it
//! behind its single guard.

use std::collections::VecDeque;

use serde::Serialize;

/// Half-open block-id range `[first, first + count)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BlockRange {
    pub first: usize,
    pub count: usize,
}

impl BlockRange {
    pub fn ids(&self) -> std::ops::Range<usize> {
        self.first..self.first + self.count
    }
}

#[derive(Debug)]
struct Entry<T> {
    task: T,
    total_blocks: usize,
    block_per_fetch: usize,
    curr_block_id: usize,
}

#[derive(Debug)]
pub struct Fetched<T> {
    pub task: T,
    pub range: BlockRange,
    /// This fetch handed out the last blocks and removed the task.
    pub popped: bool,
}

#[derive(Debug)]
pub struct TaskQueue<T> {
    entries: VecDeque<Entry<T>>,
}

impl<T> Default for TaskQueue<T> {
    fn default() -> Self {
        TaskQueue { entries: VecDeque::new() }
    }
}

impl<T: Clone> TaskQueue<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, task: T, total_blocks: usize, block_per_fetch: usize) {
        assert!(block_per_fetch >= 1, "grain must be at least 1");
        if total_blocks == 0 {
            return;
        }
        self.entries.push_back(Entry { task, total_blocks, block_per_fetch, curr_block_id: 0 });
    }

    /// Claims the next range of the front task, advancing its cursor by at
    /// most the grain and popping the task when the cursor reaches the end.
    pub fn fetch(&mut self) -> Option<Fetched<T>> {
        let front = self.entries.front_mut()?;
        let first = front.curr_block_id;
        let count = front.block_per_fetch.min(front.total_blocks - first);
        front.curr_block_id += count;
        let task = front.task.clone();
        let popped = front.curr_block_id == front.total_blocks;
        if popped {
            self.entries.pop_front();
        }
        Some(Fetched { task, range: BlockRange { first, count }, popped })
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// Cursor of the front task.
    pub fn front_cursor(&self) -> Option<usize> {
        self.entries.front().map(|e| e.curr_block_id)
    }
}
