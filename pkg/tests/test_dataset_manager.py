import gzip

import numpy as np
import pytest

from rlsnet.dataset_manager import CIFAR_RECORD_BYTES, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC, DatasetManager
from rlsnet.errors import ConfigurationError, DataFormatError


@pytest.fixture()
def dm():
    return DatasetManager()


def idx_bytes(magic: int, array: np.ndarray) -> bytes:
    header = magic.to_bytes(4, 'big') + b''.join(int(d).to_bytes(4, 'big') for d in array.shape)
    return header + array.astype(np.uint8).tobytes()


@pytest.fixture()
def mnist_dir(tmp_path):
    rng = np.random.default_rng(0)
    files = {
        'train-images-idx3-ubyte': idx_bytes(IDX_IMAGES_MAGIC, rng.integers(0, 256, (6, 28, 28))),
        'train-labels-idx1-ubyte': idx_bytes(IDX_LABELS_MAGIC, np.arange(6) % 10),
        't10k-images-idx3-ubyte': idx_bytes(IDX_IMAGES_MAGIC, np.full((2, 28, 28), 255)),
        't10k-labels-idx1-ubyte': idx_bytes(IDX_LABELS_MAGIC, np.array([3, 9])),
    }
    for name, data in files.items():
        if name.startswith('t10k'):
            with gzip.open(tmp_path / f'{name}.gz', 'wb') as f:
                f.write(data)
        else:
            (tmp_path / name).write_bytes(data)
    return tmp_path


def test_load_mnist(dm, mnist_dir):
    # When
    ds = dm.load_mnist(str(mnist_dir), flatten=True)

    # Then
    assert ds.x_train.shape == (6, 784)
    assert ds.x_test.shape == (2, 784)
    assert ds.x_train.min() >= 0.0 and ds.x_train.max() <= 1.0
    np.testing.assert_array_equal(ds.x_test, 1.0)
    np.testing.assert_array_equal(ds.y_test, [3, 9])
    assert dm.load_mnist(str(mnist_dir), flatten=False).x_train.shape == (6, 1, 28, 28)


def test_read_idx_bad_magic(tmp_path):
    # Given
    path = tmp_path / 'labels'
    path.write_bytes(idx_bytes(IDX_LABELS_MAGIC, np.arange(3)))

    # When / Then
    with pytest.raises(DataFormatError) as e:
        DatasetManager.read_idx(str(path), IDX_IMAGES_MAGIC)
    assert e.value.offset == 0
    assert e.value.exit_code == 3


def test_read_idx_truncated(tmp_path):
    path = tmp_path / 'images'
    path.write_bytes(idx_bytes(IDX_IMAGES_MAGIC, np.zeros((2, 3, 3)))[:-4])
    with pytest.raises(DataFormatError) as e:
        DatasetManager.read_idx(str(path), IDX_IMAGES_MAGIC)
    assert e.value.offset == 4 + 12 + 18 - 4


def test_read_cifar_batch(tmp_path):
    # Given a record whose R plane is 255, G plane 0, B plane 128
    record = bytes([7]) + bytes([255] * 1024) + bytes([0] * 1024) + bytes([128] * 1024)
    path = tmp_path / 'data_batch_1.bin'
    path.write_bytes(record * 2)

    # When
    images, labels = DatasetManager.read_cifar_batch(str(path))

    # Then
    assert len(record) == CIFAR_RECORD_BYTES
    assert images.shape == (2, 3, 32, 32)
    np.testing.assert_array_equal(labels, [7, 7])
    np.testing.assert_array_equal(images[0, 0], 1.0)
    np.testing.assert_array_equal(images[0, 1], 0.0)
    np.testing.assert_allclose(images[0, 2], 128 / 255)


def test_read_cifar_batch_wrong_size(tmp_path):
    path = tmp_path / 'data_batch_1.bin'
    path.write_bytes(bytes(CIFAR_RECORD_BYTES + 10))
    with pytest.raises(DataFormatError) as e:
        DatasetManager.read_cifar_batch(str(path))
    assert e.value.offset == CIFAR_RECORD_BYTES


def test_load_cifar10(dm, tmp_path):
    # Given
    nested = tmp_path / 'cifar-10-batches-bin'
    nested.mkdir()
    for i, name in enumerate([f'data_batch_{i}.bin' for i in range(1, 6)] + ['test_batch.bin']):
        (nested / name).write_bytes(bytes([i]) + bytes(CIFAR_RECORD_BYTES - 1))

    # When
    ds = dm.load_cifar10(str(tmp_path))

    # Then
    np.testing.assert_array_equal(ds.y_train, [0, 1, 2, 3, 4])
    np.testing.assert_array_equal(ds.y_test, [5])
    assert ds.n_classes == 10


def test_missing_files(dm, tmp_path):
    with pytest.raises(DataFormatError):
        dm.load_mnist(str(tmp_path))


def test_synth_sequence_dataset(dm):
    # When
    a = dm.synth_sequence_dataset(seed=4, n=10000, seq_len=9, n_test=100)
    b = dm.synth_sequence_dataset(seed=4, n=10000, seq_len=9, n_test=100)

    # Then
    np.testing.assert_array_equal(a.x_train, b.x_train)
    np.testing.assert_array_equal(a.y_train, b.y_train)
    assert a.x_train.shape == (10000, 9, 16)
    assert a.x_test.shape == (100, 9, 16)
    assert abs(a.y_train.mean() - 0.5) <= 0.02


def test_synth_sequence_labels_follow_majority(dm):
    # Given
    ds = dm.synth_sequence_dataset(seed=1, n=200, seq_len=7, vocab=8, embed_dim=8)
    embedding = DatasetManager.token_embedding(1, 8, 8)

    # When tokens are recovered from their embeddings
    tokens = np.argmin(((ds.x_train[:, :, None, :] - embedding[None, None]) ** 2).sum(axis=-1), axis=-1)

    # Then
    votes_for_one = (tokens >= 4).sum(axis=1)
    np.testing.assert_array_equal(ds.y_train, (votes_for_one > 3).astype(int))


def test_synth_sequence_rejects_bad_sizes(dm):
    with pytest.raises(ConfigurationError):
        dm.synth_sequence_dataset(seed=0, n=10, seq_len=1)
    with pytest.raises(ConfigurationError):
        dm.synth_sequence_dataset(seed=0, n=10, seq_len=4, vocab=3)


def test_synth_image_dataset(dm):
    ds = dm.synth_image_dataset(seed=2, n=50, shape=(3, 8, 8), n_test=10)
    assert ds.x_train.shape == (50, 3, 8, 8)
    assert ds.x_test.shape == (10, 3, 8, 8)
    assert 0.0 <= ds.x_train.min() and ds.x_train.max() <= 1.0
    np.testing.assert_array_equal(ds.x_train, dm.synth_image_dataset(seed=2, n=50, n_test=10).x_train)


def test_load_tokenized_file(dm, tmp_path):
    # Given
    path = tmp_path / 'reviews.tsv'
    path.write_text('1\t3 4 5\n0\t1 2 3 4 5 6 7\n\n1\t2\n0\t6 6\n1\t7 7 7\n')

    # When
    ds = dm.load_tokenized_file(str(path), seed=0, seq_len=4, vocab=8, embed_dim=3, test_fraction=0.2)

    # Then
    assert ds.x_train.shape == (4, 4, 3)
    assert ds.x_test.shape == (1, 4, 3)
    assert ds.n_classes == 2
    assert sorted(np.concatenate([ds.y_train, ds.y_test]).tolist()) == [0, 0, 1, 1, 1]


def test_load_tokenized_file_errors(dm, tmp_path):
    # Given
    path = tmp_path / 'bad.tsv'
    path.write_text('1\t1 2\nx\t1 2\n')

    # When / Then
    with pytest.raises(DataFormatError) as e:
        dm.load_tokenized_file(str(path), seed=0, seq_len=4, vocab=8)
    assert e.value.offset == len('1\t1 2\n')

    path.write_text('1\t1 9\n')
    with pytest.raises(DataFormatError):
        dm.load_tokenized_file(str(path), seed=0, seq_len=4, vocab=8)


def test_minibatches_partition():
    # When
    batches = list(DatasetManager.minibatches(10, 4, np.random.default_rng(0)))

    # Then
    assert [len(b) for b in batches] == [4, 4, 2]
    assert sorted(np.concatenate(batches).tolist()) == list(range(10))
    with pytest.raises(ConfigurationError):
        list(DatasetManager.minibatches(10, 0, np.random.default_rng(0)))


def test_subset(dm):
    ds = dm.synth_image_dataset(seed=0, n=20, n_test=5).subset(8, None)
    assert len(ds.y_train) == 8
    assert len(ds.y_test) == 5
