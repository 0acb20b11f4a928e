//! Local ordered view over present list elements.
//!
//! Not a CRDT: a cache derived from replicated state. Stored as a vector of
//! sorted chunks so inserts and removals stay cheap while index queries only
//! walk chunk lengths.

const MAX_CHUNK: usize = 128;

#[derive(Clone, Debug)]
pub struct LocalList<K, V> {
    chunks: Vec<Vec<(K, V)>>,
    len: usize,
}

impl<K, V> Default for LocalList<K, V> {
    fn default() -> Self {
        LocalList { chunks: Vec::new(), len: 0 }
    }
}

impl<K: Ord, V> LocalList<K, V> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds from entries already sorted by key.
    pub fn from_sorted(entries: Vec<(K, V)>) -> Self {
        let len = entries.len();
        let mut chunks = Vec::with_capacity(len / MAX_CHUNK + 1);
        let mut it = entries.into_iter().peekable();
        while it.peek().is_some() {
            chunks.push(it.by_ref().take(MAX_CHUNK / 2).collect());
        }
        LocalList { chunks, len }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Chunk that holds or would hold `key`.
    fn chunk_for(&self, key: &K) -> usize {
        let i = self.chunks.partition_point(|c| c.last().is_some_and(|(k, _)| k < key));
        i.min(self.chunks.len().saturating_sub(1))
    }

    fn offset_of_chunk(&self, ci: usize) -> usize {
        self.chunks[..ci].iter().map(Vec::len).sum()
    }

    /// Inserts or replaces; returns the element's index.
    pub fn insert(&mut self, key: K, value: V) -> usize {
        if self.chunks.is_empty() {
            self.chunks.push(Vec::new());
        }
        let ci = self.chunk_for(&key);
        let chunk = &mut self.chunks[ci];
        let at = match chunk.binary_search_by(|(k, _)| k.cmp(&key)) {
            Ok(i) => {
                chunk[i].1 = value;
                return self.offset_of_chunk(ci) + i;
            }
            Err(i) => i,
        };
        chunk.insert(at, (key, value));
        self.len += 1;
        if chunk.len() > MAX_CHUNK {
            let tail = chunk.split_off(chunk.len() / 2);
            self.chunks.insert(ci + 1, tail);
        }
        self.offset_of_chunk(ci) + at
    }

    pub fn remove(&mut self, key: &K) -> Option<(usize, V)> {
        if self.chunks.is_empty() {
            return None;
        }
        let ci = self.chunk_for(key);
        let i = self.chunks[ci].binary_search_by(|(k, _)| k.cmp(key)).ok()?;
        let (_, v) = self.chunks[ci].remove(i);
        self.len -= 1;
        let index = self.offset_of_chunk(ci) + i;
        if self.chunks[ci].is_empty() {
            self.chunks.remove(ci);
        }
        Some((index, v))
    }

    pub fn index_of(&self, key: &K) -> Option<usize> {
        if self.chunks.is_empty() {
            return None;
        }
        let ci = self.chunk_for(key);
        let i = self.chunks[ci].binary_search_by(|(k, _)| k.cmp(key)).ok()?;
        Some(self.offset_of_chunk(ci) + i)
    }

    pub fn contains(&self, key: &K) -> bool {
        self.index_of(key).is_some()
    }

    pub fn get_value(&self, key: &K) -> Option<&V> {
        if self.chunks.is_empty() {
            return None;
        }
        let ci = self.chunk_for(key);
        let i = self.chunks[ci].binary_search_by(|(k, _)| k.cmp(key)).ok()?;
        Some(&self.chunks[ci][i].1)
    }

    pub fn get(&self, mut index: usize) -> Option<(&K, &V)> {
        for c in &self.chunks {
            if index < c.len() {
                let (k, v) = &c[index];
                return Some((k, v));
            }
            index -= c.len();
        }
        None
    }

    pub fn iter(&self) -> impl Iterator<Item = (&K, &V)> + '_ {
        self.chunks.iter().flatten().map(|(k, v)| (k, v))
    }

    /// Elements at `start..start + count`, in order.
    pub fn range(&self, start: usize, count: usize) -> impl Iterator<Item = (&K, &V)> + '_ {
        self.iter().skip(start).take(count)
    }

    pub fn clear(&mut self) {
        self.chunks.clear();
        self.len = 0;
    }
}
