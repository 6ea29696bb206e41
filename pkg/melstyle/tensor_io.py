"""
GSTN binary tensor files and phoneme vocabulary files.

GSTN layout: magic ``b"GSTN"``, u8 version, u8 rank, little-endian u32
dims[rank], then the row-major payload. Version 1 stores little-endian f32.
Version 2 inserts a u8 dtype code after the rank (0 = f32, 1 = f64) so that
double precision parameters round-trip exactly.
"""
# License: simplified BSD

import struct

import numpy as np

MAGIC = b'GSTN'
_DTYPES = {0: np.dtype('<f4'), 1: np.dtype('<f8')}


def encode_tensor(array, version=1):
    """Serialise an array to GSTN bytes."""
    array = np.asarray(array)
    if version == 1:
        code = 0
    elif version == 2:
        code = 1 if array.dtype == np.float64 else 0
    else:
        raise ValueError('unsupported GSTN version %r' % version)
    header = MAGIC + struct.pack('<BB', version, array.ndim)
    if version == 2:
        header += struct.pack('<B', code)
    header += struct.pack('<%dI' % array.ndim, *array.shape)
    payload = np.ascontiguousarray(array, dtype=_DTYPES[code]).tobytes()
    return header + payload


def decode_tensor(buffer, offset=0, source='<buffer>'):
    """Parse one GSTN tensor from ``buffer`` starting at ``offset``.

    Returns
    -------
    array: ndarray
    end: int
        Offset just past the tensor.
    """
    if buffer[offset:offset + 4] != MAGIC:
        raise OSError('%s: bad magic %r, expected %r'
                      % (source, bytes(buffer[offset:offset + 4]), MAGIC))
    if len(buffer) < offset + 6:
        raise OSError('%s: truncated header' % source)
    version, rank = struct.unpack_from('<BB', buffer, offset + 4)
    pos = offset + 6
    if version == 1:
        code = 0
    elif version == 2:
        if len(buffer) < pos + 1:
            raise OSError('%s: truncated header' % source)
        code = buffer[pos]
        pos += 1
        if code not in _DTYPES:
            raise OSError('%s: unknown dtype code %d' % (source, code))
    else:
        raise OSError('%s: unsupported GSTN version %d' % (source, version))
    if len(buffer) < pos + 4 * rank:
        raise OSError('%s: truncated header' % source)
    dims = struct.unpack_from('<%dI' % rank, buffer, pos)
    pos += 4 * rank
    dtype = _DTYPES[code]
    count = int(np.prod(dims)) if rank else 1
    end = pos + count * dtype.itemsize
    if len(buffer) < end:
        raise OSError('%s: truncated payload (%d of %d bytes)'
                      % (source, len(buffer) - pos, end - pos))
    array = np.frombuffer(buffer, dtype=dtype, count=count, offset=pos)
    return array.reshape(dims).astype(dtype.newbyteorder('=')), end


def save_tensor(path, array, version=1):
    with open(path, 'wb') as fp:
        fp.write(encode_tensor(array, version))


def load_tensor(path):
    with open(path, 'rb') as fp:
        buffer = fp.read()
    array, end = decode_tensor(buffer, source=str(path))
    if end != len(buffer):
        raise OSError('%s: %d trailing bytes' % (path, len(buffer) - end))
    return array


def load_vocabulary(path):
    """Phoneme symbols, one per line; the line number is the id."""
    with open(path, encoding='utf-8') as fp:
        symbols = [line.rstrip('\n') for line in fp]
    while symbols and symbols[-1] == '':
        symbols.pop()
    if not symbols:
        raise ValueError('%s: empty phoneme vocabulary' % path)
    return symbols


def save_vocabulary(path, symbols):
    with open(path, 'w', encoding='utf-8') as fp:
        for symbol in symbols:
            fp.write('%s\n' % symbol)
