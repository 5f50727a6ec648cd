import gzip
import os
from dataclasses import dataclass, replace
from typing import Iterator, Optional, Sequence, Tuple

import numpy as np

from rlsnet.errors import ConfigurationError, DataFormatError
from rlsnet.log_manager import LogManager

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD_BYTES = 1 + 3 * 32 * 32

MNIST_FILES = {
    'train_images': ('train-images-idx3-ubyte', 'train-images.idx3-ubyte'),
    'train_labels': ('train-labels-idx1-ubyte', 'train-labels.idx1-ubyte'),
    'test_images': ('t10k-images-idx3-ubyte', 't10k-images.idx3-ubyte'),
    'test_labels': ('t10k-labels-idx1-ubyte', 't10k-labels.idx1-ubyte'),
}
CIFAR_TRAIN_FILES = tuple(f'data_batch_{i}.bin' for i in range(1, 6))
CIFAR_TEST_FILES = ('test_batch.bin',)


@dataclass
class Dataset(object):
    name: str
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    n_classes: int

    def subset(self, n_train: Optional[int], n_test: Optional[int]) -> 'Dataset':
        '''
        Leading n_train / n_test examples; None keeps a split whole.
        '''
        return replace(self,
                       x_train=self.x_train[:n_train], y_train=self.y_train[:n_train],
                       x_test=self.x_test[:n_test], y_test=self.y_test[:n_test])


def _read_bytes(path: str) -> bytes:
    opener = gzip.open if path.endswith('.gz') else open
    try:
        with opener(path, 'rb') as f:
            return f.read()
    except OSError as e:
        raise DataFormatError(f'cannot read: {e}', path=path, offset=0)


def _find(data_dir: str, candidates: Sequence[str]) -> str:
    for name in candidates:
        for path in (os.path.join(data_dir, name), os.path.join(data_dir, name + '.gz')):
            if os.path.exists(path):
                return path
    raise DataFormatError(f'none of {list(candidates)} found', path=data_dir)


class DatasetManager(object):
    def __init__(self):
        self.logger = LogManager.get_logger('DatasetManager')

    @staticmethod
    def read_idx(path: str, magic: int) -> np.ndarray:
        '''
        Read a big-endian IDX file of unsigned bytes.

        :param path: file path, optionally gzip compressed
        :param magic: expected magic number
        :return: uint8 array shaped by the header dimensions
        '''
        data = _read_bytes(path)
        if len(data) < 4:
            raise DataFormatError('truncated IDX header', path=path, offset=len(data))
        found = int.from_bytes(data[:4], 'big')
        if found != magic:
            raise DataFormatError(f'bad magic number 0x{found:08x}, expected 0x{magic:08x}', path=path, offset=0)
        ndim = data[3]
        header = 4 + 4 * ndim
        if len(data) < header:
            raise DataFormatError('truncated IDX dimensions', path=path, offset=len(data))
        dims = tuple(int(d) for d in np.frombuffer(data, dtype='>u4', count=ndim, offset=4))
        size = int(np.prod(dims))
        if len(data) < header + size:
            raise DataFormatError(f'truncated IDX payload, expected {header + size} bytes', path=path,
                                  offset=len(data))
        return np.frombuffer(data, dtype=np.uint8, count=size, offset=header).reshape(dims)

    def load_mnist(self, data_dir: str, flatten: bool = True) -> Dataset:
        '''
        MNIST from its IDX files, pixels scaled to [0, 1].

        :param data_dir: directory holding the four IDX files
        :param flatten: 784-vectors for FNNs, else M x 1 x 28 x 28
        :return: Dataset
        '''
        arrays = {}
        for key, names in MNIST_FILES.items():
            magic = IDX_IMAGES_MAGIC if key.endswith('images') else IDX_LABELS_MAGIC
            arrays[key] = self.read_idx(_find(data_dir, names), magic)

        def images(a):
            a = a.astype(np.float64) / 255.0
            return a.reshape(a.shape[0], -1) if flatten else a.reshape(a.shape[0], 1, a.shape[1], a.shape[2])

        for split in ('train', 'test'):
            if arrays[f'{split}_images'].shape[0] != arrays[f'{split}_labels'].shape[0]:
                raise DataFormatError(f'{split} images and labels differ in count', path=data_dir)
        ds = Dataset(name='mnist',
                     x_train=images(arrays['train_images']), y_train=arrays['train_labels'].astype(np.int64),
                     x_test=images(arrays['test_images']), y_test=arrays['test_labels'].astype(np.int64),
                     n_classes=10)
        self.logger.info(f'mnist: train {ds.x_train.shape}, test {ds.x_test.shape}')
        return ds

    @staticmethod
    def read_cifar_batch(path: str) -> Tuple[np.ndarray, np.ndarray]:
        '''
        One CIFAR-10 binary batch: records of 1 label byte and 3072 R, G, B plane bytes.

        :return: (M x 3 x 32 x 32 images in [0, 1], labels)
        '''
        data = _read_bytes(path)
        if len(data) == 0 or len(data) % CIFAR_RECORD_BYTES:
            raise DataFormatError(f'size {len(data)} is not a multiple of {CIFAR_RECORD_BYTES}-byte records',
                                  path=path, offset=len(data) - len(data) % CIFAR_RECORD_BYTES)
        records = np.frombuffer(data, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
        labels = records[:, 0].astype(np.int64)
        if np.any(labels > 9):
            bad = int(np.argmax(labels > 9))
            raise DataFormatError(f'label {labels[bad]} out of range', path=path, offset=bad * CIFAR_RECORD_BYTES)
        images = records[:, 1:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0
        return images, labels

    def load_cifar10(self, data_dir: str) -> Dataset:
        '''
        CIFAR-10 from its binary batches (data_batch_1..5.bin, test_batch.bin).

        :param data_dir: directory holding the batches, or its parent
        :return: Dataset
        '''
        nested = os.path.join(data_dir, 'cifar-10-batches-bin')
        if os.path.isdir(nested):
            data_dir = nested

        def load(names):
            parts = [self.read_cifar_batch(_find(data_dir, (n,))) for n in names]
            return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])

        x_train, y_train = load(CIFAR_TRAIN_FILES)
        x_test, y_test = load(CIFAR_TEST_FILES)
        ds = Dataset(name='cifar10', x_train=x_train, y_train=y_train, x_test=x_test, y_test=y_test, n_classes=10)
        self.logger.info(f'cifar10: train {ds.x_train.shape}, test {ds.x_test.shape}')
        return ds

    @staticmethod
    def token_embedding(seed: int, vocab: int, embed_dim: int) -> np.ndarray:
        '''
        Fixed random projection of token ids, seeded by the experiment seed.
        '''
        rng = np.random.default_rng([seed, 0xE3B])
        return rng.standard_normal((vocab, embed_dim)) / np.sqrt(embed_dim)

    def synth_sequence_dataset(self,
                               seed: int,
                               n: int,
                               seq_len: int,
                               vocab: int = 16,
                               embed_dim: int = 16,
                               n_test: int = 0) -> Dataset:
        '''
        Majority-token task. Token ids 1..vocab/2-1 vote for class 0, the rest for class 1;
        the label is the class holding the strict majority of positions.

        :param seed: generator seed
        :param n: training sequences
        :param seq_len: T, >= 2
        :param vocab: token count, >= 4
        :param embed_dim: embedding width
        :param n_test: test sequences
        :return: Dataset with M x T x embed_dim inputs and binary labels
        '''
        if seq_len < 2:
            raise ConfigurationError(f'sequence length must be >= 2, got {seq_len}')
        if vocab < 4:
            raise ConfigurationError(f'vocabulary must hold at least 4 tokens, got {vocab}')
        rng = np.random.default_rng(seed)
        total = n + n_test
        half = vocab // 2
        groups = (np.arange(1, half), np.arange(half, vocab))

        labels = rng.integers(0, 2, size=total)
        tokens = np.empty((total, seq_len), dtype=np.int64)
        for i, label in enumerate(labels):
            n_major = rng.integers(seq_len // 2 + 1, seq_len + 1)
            votes = np.zeros(seq_len, dtype=bool)
            votes[rng.permutation(seq_len)[:n_major]] = True
            tokens[i] = np.where(votes,
                                 rng.choice(groups[label], size=seq_len),
                                 rng.choice(groups[1 - label], size=seq_len))

        x = self.token_embedding(seed, vocab, embed_dim)[tokens]
        ds = Dataset(name='synth-seq', x_train=x[:n], y_train=labels[:n], x_test=x[n:], y_test=labels[n:],
                     n_classes=2)
        self.logger.info(f'synth-seq: train {ds.x_train.shape}, test {ds.x_test.shape}')
        return ds

    def synth_image_dataset(self,
                            seed: int,
                            n: int,
                            shape: Sequence[int] = (3, 8, 8),
                            n_classes: int = 10,
                            n_test: int = 0) -> Dataset:
        '''
        Images in [0, 1] made of a per-class prototype half-blended with uniform noise.
        '''
        rng = np.random.default_rng(seed)
        prototypes = rng.uniform(0.0, 1.0, size=(n_classes,) + tuple(shape))
        labels = rng.integers(0, n_classes, size=n + n_test)
        x = 0.5 * prototypes[labels] + 0.5 * rng.uniform(0.0, 1.0, size=(n + n_test,) + tuple(shape))
        ds = Dataset(name='synth-image', x_train=x[:n], y_train=labels[:n], x_test=x[n:], y_test=labels[n:],
                     n_classes=n_classes)
        self.logger.info(f'synth-image: train {ds.x_train.shape}, test {ds.x_test.shape}')
        return ds

    def load_tokenized_file(self,
                            path: str,
                            seed: int,
                            seq_len: int,
                            vocab: int,
                            embed_dim: int = 16,
                            test_fraction: float = 0.2) -> Dataset:
        '''
        Externally prepared sequences, one per line: ``label<TAB>tok tok ...`` with integer tokens.
        Sequences keep their last seq_len tokens and are left-padded with token 0.

        :return: Dataset split after a seeded shuffle
        '''
        data = _read_bytes(path)
        labels, rows, offset = [], [], 0
        for line in data.splitlines(keepends=True):
            text = line.decode('utf-8', errors='replace').strip()
            if text:
                try:
                    label, _, body = text.partition('\t')
                    toks = [int(t) for t in body.split()]
                    label = int(label)
                except ValueError:
                    raise DataFormatError('expected "label<TAB>tokens"', path=path, offset=offset)
                if label < 0 or any(t < 0 or t >= vocab for t in toks):
                    raise DataFormatError(f'label or token outside vocabulary {vocab}', path=path, offset=offset)
                toks = toks[-seq_len:]
                rows.append([0] * (seq_len - len(toks)) + toks)
                labels.append(label)
            offset += len(line)
        if not rows:
            raise DataFormatError('no sequences found', path=path, offset=0)

        tokens, labels = np.array(rows, dtype=np.int64), np.array(labels, dtype=np.int64)
        order = np.random.default_rng(seed).permutation(len(labels))
        tokens, labels = tokens[order], labels[order]
        n_train = len(labels) - int(round(test_fraction * len(labels)))
        x = self.token_embedding(seed, vocab, embed_dim)[tokens]
        ds = Dataset(name='tokenized-file', x_train=x[:n_train], y_train=labels[:n_train],
                     x_test=x[n_train:], y_test=labels[n_train:], n_classes=max(2, int(labels.max()) + 1))
        self.logger.info(f'tokenized-file: train {ds.x_train.shape}, test {ds.x_test.shape}')
        return ds

    @staticmethod
    def minibatches(n: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
        '''
        Shuffled partition of range(n); the last short batch is kept.
        '''
        if batch_size < 1:
            raise ConfigurationError(f'batch size must be >= 1, got {batch_size}')
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            yield order[start:start + batch_size]
