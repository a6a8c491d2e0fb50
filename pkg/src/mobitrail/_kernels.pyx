# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops.  ``mobitrail._fallback`` documents the semantics."""

import numpy as np

from cython.parallel import prange
from libc.math cimport sin, cos, asin, sqrt, atan2, floor, isfinite, M_PI
from libc.stdint cimport int32_t, int64_t, uint8_t, uint64_t, INT64_MIN
from libc.stdlib cimport malloc, free, qsort, strtod
from libc.string cimport memchr, memcmp, memcpy
from cpython.bytes cimport PyBytes_FromStringAndSize, PyBytes_AS_STRING, PyBytes_GET_SIZE

from mobitrail._rows import RowError, parse_csv_line, parse_unix_ts

BACKEND = "cython"

cdef double EARTH_RADIUS_KM = 6371.0
cdef double DEG2RAD = M_PI / 180.0
cdef int64_t SECONDS_PER_DAY = 86400


cdef inline double _hav(double lat1, double lon1, double lat2, double lon2) noexcept nogil:
    cdef double p1 = lat1 * DEG2RAD
    cdef double p2 = lat2 * DEG2RAD
    cdef double dphi = p2 - p1
    cdef double dl = (lon2 - lon1) * DEG2RAD
    cdef double s1 = sin(dphi * 0.5)
    cdef double s2 = sin(dl * 0.5)
    cdef double h = s1 * s1 + (cos(p1) * cos(p2)) * (s2 * s2)
    if h < 0.0:
        h = 0.0
    elif h > 1.0:
        h = 1.0
    return 2.0 * EARTH_RADIUS_KM * asin(sqrt(h))


def haversine(const double[::1] lat1, const double[::1] lon1, const double[::1] lat2, const double[::1] lon2):
    cdef Py_ssize_t n = lat1.shape[0], i
    out = np.empty(n)
    cdef double[::1] o = out
    for i in range(n):
        o[i] = _hav(lat1[i], lon1[i], lat2[i], lon2[i])
    return out


# ---------------------------------------------------------------- gyration

cdef void _gyr_one(const double* lat, const double* lon, int64_t lo, int64_t hi,
                   double* clat, double* clon, double* rg, uint8_t* deg) noexcept nogil:
    cdef int64_t n = hi - lo
    cdef int64_t i
    cdef double flat, flon, sx = 0.0, sy = 0.0, sz = 0.0, phi, lam, cp
    cdef double mx, my, mz, norm, cl, cn, acc = 0.0, d
    cdef bint same = True
    if n <= 0:
        return
    flat = lat[lo]
    flon = lon[lo]
    for i in range(lo + 1, hi):
        if lat[i] != flat or lon[i] != flon:
            same = False
            break
    if same:
        clat[0] = flat
        clon[0] = flon
        rg[0] = 0.0
        return
    for i in range(lo, hi):
        phi = lat[i] * DEG2RAD
        lam = lon[i] * DEG2RAD
        cp = cos(phi)
        sx = sx + cp * cos(lam)
        sy = sy + cp * sin(lam)
        sz = sz + sin(phi)
    mx = sx / <double>n
    my = sy / <double>n
    mz = sz / <double>n
    norm = sqrt(mx * mx + my * my + mz * mz)
    if norm < 1e-12:
        cl = flat
        cn = flon
        deg[0] = 1
    else:
        cl = atan2(mz, sqrt(mx * mx + my * my)) / DEG2RAD
        cn = atan2(my, mx) / DEG2RAD
        if cn >= 180.0:
            cn = -180.0
    for i in range(lo, hi):
        d = _hav(lat[i], lon[i], cl, cn)
        acc = acc + d * d
    clat[0] = cl
    clon[0] = cn
    rg[0] = sqrt(acc / <double>n)


def gyration(const int64_t[::1] offsets, const double[::1] lat, const double[::1] lon, int threads=1):
    cdef Py_ssize_t n_users = offsets.shape[0] - 1
    com_lat = np.zeros(n_users)
    com_lon = np.zeros(n_users)
    rg = np.zeros(n_users)
    degenerate = np.zeros(n_users, dtype=np.uint8)
    if lat.shape[0] == 0 or n_users <= 0:
        return com_lat, com_lon, rg, degenerate
    cdef double[::1] cl = com_lat, cn = com_lon, r = rg
    cdef uint8_t[::1] dg = degenerate
    cdef const double* plat = &lat[0]
    cdef const double* plon = &lon[0]
    cdef Py_ssize_t u
    cdef int nt = threads if threads > 0 else 1
    for u in prange(n_users, nogil=True, num_threads=nt, schedule="guided"):
        _gyr_one(plat, plon, offsets[u], offsets[u + 1], &cl[u], &cn[u], &r[u], &dg[u])
    return com_lat, com_lon, rg, degenerate


# ---------------------------------------------------------------- home stats

cdef struct RegIdx:
    int64_t region
    int64_t idx


cdef int _cmp_regidx(const void* a, const void* b) noexcept nogil:
    cdef const RegIdx* x = <const RegIdx*>a
    cdef const RegIdx* y = <const RegIdx*>b
    if x.region < y.region:
        return -1
    if x.region > y.region:
        return 1
    if x.idx < y.idx:
        return -1
    if x.idx > y.idx:
        return 1
    return 0


cdef inline int64_t _floordiv(int64_t a, int64_t b) noexcept nogil:
    cdef int64_t q = a / b
    if (a % b != 0) and ((a < 0) != (b < 0)):
        q -= 1
    return q


cdef void _home_one(const int64_t* ts, const int64_t* region, int64_t lo, int64_t hi,
                    int64_t off, int start_hour, int end_hour,
                    int64_t* out_region, int64_t* out_score, uint8_t* out_tied) noexcept nogil:
    cdef int64_t n = hi - lo
    cdef int64_t k, g, h, i, t, local, d, nd, hr, reg, first_t, last_t
    cdef int64_t cnt, days, last_day, nights, ndays, last_nd
    cdef int64_t st[5]
    cdef int64_t best[5]
    cdef int64_t best_first[5]
    cdef int64_t best_region[5]
    cdef int64_t ntop[5]
    cdef int m
    cdef bint wrap = start_hour > end_hour
    cdef bint isn
    cdef int64_t shift = end_hour * 3600 if wrap else 0
    cdef RegIdx* buf
    if n <= 0:
        return
    buf = <RegIdx*>malloc(n * sizeof(RegIdx))
    if buf == NULL:
        return
    for k in range(n):
        buf[k].region = region[lo + k]
        buf[k].idx = lo + k
    qsort(buf, n, sizeof(RegIdx), _cmp_regidx)
    for m in range(5):
        best[m] = -1
        best_first[m] = 0
        best_region[m] = -1
        ntop[m] = 0
    g = 0
    while g < n:
        reg = buf[g].region
        first_t = ts[buf[g].idx]
        last_t = first_t
        cnt = 0
        days = 0
        nights = 0
        ndays = 0
        last_day = INT64_MIN
        last_nd = INT64_MIN
        h = g
        while h < n and buf[h].region == reg:
            i = buf[h].idx
            t = ts[i]
            local = t + off
            d = _floordiv(local, SECONDS_PER_DAY)
            cnt += 1
            if d != last_day:
                days += 1
                last_day = d
            hr = (local - d * SECONDS_PER_DAY) / 3600
            if wrap:
                isn = hr >= start_hour or hr < end_hour
            else:
                isn = hr >= start_hour and hr < end_hour
            if isn:
                nights += 1
                nd = _floordiv(local - shift, SECONDS_PER_DAY)
                if nd != last_nd:
                    ndays += 1
                    last_nd = nd
            last_t = t
            h += 1
        st[0] = cnt
        st[1] = days
        st[2] = last_t - first_t
        st[3] = nights
        st[4] = ndays
        for m in range(5):
            if st[m] > best[m]:
                best[m] = st[m]
                best_first[m] = first_t
                best_region[m] = reg
                ntop[m] = 1
            elif st[m] == best[m]:
                ntop[m] += 1
                if first_t < best_first[m] or (first_t == best_first[m] and reg < best_region[m]):
                    best_first[m] = first_t
                    best_region[m] = reg
        g = h
    free(buf)
    for m in range(5):
        if best[m] > 0:
            out_region[m] = best_region[m]
            out_score[m] = best[m]
            out_tied[m] = 1 if ntop[m] > 1 else 0
        else:
            out_region[m] = -1
            out_score[m] = 0
            out_tied[m] = 0


def home_stats(const int64_t[::1] offsets, const int64_t[::1] ts, const int64_t[::1] region,
               int64_t utc_offset_s, int start_hour, int end_hour, int threads=1):
    cdef Py_ssize_t n_users = offsets.shape[0] - 1
    out_region = np.full((n_users, 5), -1, dtype=np.int64)
    out_score = np.zeros((n_users, 5), dtype=np.int64)
    out_tied = np.zeros((n_users, 5), dtype=np.uint8)
    if ts.shape[0] == 0 or n_users <= 0:
        return out_region, out_score, out_tied
    cdef int64_t[:, ::1] orr = out_region, osc = out_score
    cdef uint8_t[:, ::1] oti = out_tied
    cdef const int64_t* pts = &ts[0]
    cdef const int64_t* preg = &region[0]
    cdef Py_ssize_t u
    cdef int nt = threads if threads > 0 else 1
    for u in prange(n_users, nogil=True, num_threads=nt, schedule="guided"):
        _home_one(pts, preg, offsets[u], offsets[u + 1], utc_offset_s, start_hour, end_hour,
                  &orr[u, 0], &osc[u, 0], &oti[u, 0])
    return out_region, out_score, out_tied


# ---------------------------------------------------------------- lookup partition

cdef bint _pip(double y, double x, const double* ry, const double* rx, int64_t n) noexcept nogil:
    cdef bint inside = False
    cdef int64_t i, j = n - 1
    cdef double yi, xi, yj, xj
    for i in range(n):
        yi = ry[i]
        xi = rx[i]
        yj = ry[j]
        xj = rx[j]
        if ((yi > y) != (yj > y)) and (x < (xj - xi) * (y - yi) / (yj - yi) + xi):
            inside = not inside
        j = i
    return inside


def lookup_assign(const double[::1] lat, const double[::1] lon, index, int threads=1):
    cdef Py_ssize_t n = lat.shape[0], p
    out = np.full(n, -1, dtype=np.int64)
    if n == 0:
        return out
    cdef int64_t[::1] o = out
    cdef const int64_t[::1] ids = index.region_ids
    cdef const double[:, ::1] bbox = index.bbox
    cdef const uint8_t[::1] is_rect = index.is_rect
    cdef const int64_t[::1] roff = index.ring_offsets
    cdef const double[::1] rlat = index.ring_lat
    cdef const double[::1] rlon = index.ring_lon
    cdef const int64_t[::1] coff = index.cell_offsets
    cdef const int64_t[::1] creg = index.cell_regions
    cdef double lat0 = index.grid_lat0, lon0 = index.grid_lon0, cell = index.grid_cell
    cdef int64_t rows = index.grid_rows, cols = index.grid_cols
    cdef const double* prlat = &rlat[0] if rlat.shape[0] > 0 else NULL
    cdef const double* prlon = &rlon[0] if rlon.shape[0] > 0 else NULL
    cdef int nt = threads if threads > 0 else 1
    cdef double y, x
    cdef int64_t r, c, q, k, res
    for p in prange(n, nogil=True, num_threads=nt, schedule="static"):
        y = lat[p]
        x = lon[p]
        res = -1
        if y >= lat0 and x >= lon0:
            r = <int64_t>floor((y - lat0) / cell)
            c = <int64_t>floor((x - lon0) / cell)
            if r < rows and c < cols:
                q = coff[r * cols + c]
                while q < coff[r * cols + c + 1]:
                    k = creg[q]
                    if is_rect[k]:
                        if y >= bbox[k, 0] and y < bbox[k, 2] and x >= bbox[k, 1] and x < bbox[k, 3]:
                            res = ids[k]
                            break
                    elif (y >= bbox[k, 0] and y <= bbox[k, 2] and x >= bbox[k, 1] and x <= bbox[k, 3]
                          and _pip(y, x, prlat + roff[k], prlon + roff[k], roff[k + 1] - roff[k])):
                        res = ids[k]
                        break
                    q = q + 1
        o[p] = res
    return out


# ---------------------------------------------------------------- CSV reader

cdef inline bint _numch(unsigned char c) noexcept nogil:
    return (48 <= c <= 57) or c == 43 or c == 45 or c == 46 or c == 101 or c == 69


cdef class _CsvState:
    cdef dict codes
    cdef list users
    cdef object c_a, t_a, la_a, lo_a, r_a
    cdef int32_t[::1] c_v
    cdef int64_t[::1] t_v
    cdef double[::1] la_v
    cdef double[::1] lo_v
    cdef int64_t[::1] r_v
    cdef Py_ssize_t n, cap
    cdef public int64_t lineno, total, errors
    cdef bint has_region
    cdef object on_error
    cdef bytes last_user
    cdef int32_t last_code

    def __cinit__(self, bint has_region, int64_t lineno, on_error):
        self.codes = {}
        self.users = []
        self.has_region = has_region
        self.lineno = lineno
        self.on_error = on_error
        self.total = 0
        self.errors = 0
        self.n = 0
        self.cap = 0
        self.last_user = None
        self.last_code = -1
        self._alloc(1 << 16)

    cdef int _alloc(self, Py_ssize_t cap) except -1:
        c_a = np.empty(cap, dtype=np.int32)
        t_a = np.empty(cap, dtype=np.int64)
        la_a = np.empty(cap, dtype=np.float64)
        lo_a = np.empty(cap, dtype=np.float64)
        r_a = np.empty(cap, dtype=np.int64)
        if self.n:
            c_a[:self.n] = self.c_a[:self.n]
            t_a[:self.n] = self.t_a[:self.n]
            la_a[:self.n] = self.la_a[:self.n]
            lo_a[:self.n] = self.lo_a[:self.n]
            r_a[:self.n] = self.r_a[:self.n]
        self.c_a, self.t_a, self.la_a, self.lo_a, self.r_a = c_a, t_a, la_a, lo_a, r_a
        self.c_v = c_a
        self.t_v = t_a
        self.la_v = la_a
        self.lo_v = lo_a
        self.r_v = r_a
        self.cap = cap
        return 0

    cdef inline int _push(self, int32_t code, int64_t ts, double lat, double lon, int64_t region) except -1:
        if self.n == self.cap:
            self._alloc(self.cap * 2)
        self.c_v[self.n] = code
        self.t_v[self.n] = ts
        self.la_v[self.n] = lat
        self.lo_v[self.n] = lon
        self.r_v[self.n] = region
        self.n += 1
        return 0

    cdef int _err(self, str msg) except -1:
        self.errors += 1
        self.on_error(self.lineno, msg)
        return 0

    cdef int32_t _code_for(self, const unsigned char* s, Py_ssize_t L) except -2:
        cdef bytes key
        if self.last_user is not None and PyBytes_GET_SIZE(self.last_user) == L \
                and memcmp(PyBytes_AS_STRING(self.last_user), s, L) == 0:
            return self.last_code
        key = PyBytes_FromStringAndSize(<const char*>s, L)
        code = self.codes.get(key)
        if code is None:
            try:
                name = key.decode("utf-8")
            except UnicodeDecodeError:
                return -1
            code = len(self.users)
            self.users.append(name)
            self.codes[key] = code
        self.last_user = key
        self.last_code = code
        return code

    cdef int _slow(self, const unsigned char* s, Py_ssize_t L) except -1:
        line = PyBytes_FromStringAndSize(<const char*>s, L)
        try:
            user, ts, lat, lon, region = parse_csv_line(line, self.has_region)
        except RowError as exc:
            return self._err(str(exc))
        cdef bytes ub = user.encode("utf-8")
        code = self._code_for(<const unsigned char*>PyBytes_AS_STRING(ub), PyBytes_GET_SIZE(ub))
        self._push(code, ts, lat, lon, region)
        return 0

    cdef int _line(self, const unsigned char* s, Py_ssize_t L) except -1:
        cdef Py_ssize_t starts[6]
        cdef Py_ssize_t ends[6]
        cdef Py_ssize_t i, nf = 0, fs = 0, a, b, expected
        cdef unsigned char c
        cdef int64_t ts, region
        cdef double lat, lon
        cdef char* endp
        cdef int32_t code
        if L > 0 and s[L - 1] == 13:
            L -= 1
        if L == 0:
            return 0
        self.total += 1
        for i in range(L):
            c = s[i]
            if c == 34:
                return self._slow(s, L)
            if c == 44:
                if nf < 6:
                    starts[nf] = fs
                    ends[nf] = i
                nf += 1
                fs = i + 1
        if nf < 6:
            starts[nf] = fs
            ends[nf] = L
        nf += 1
        expected = 5 if self.has_region else 4
        if nf != expected:
            return self._err(f"expected {expected} fields, got {nf}")
        # timestamp
        a, b = starts[1], ends[1]
        if b - a < 1 or b - a > 18:
            return self._err(f"bad timestamp {bytes(s[a:b])[:40]!r}")
        ts = 0
        for i in range(a, b):
            c = s[i]
            if c < 48 or c > 57:
                return self._err(f"bad timestamp {bytes(s[a:b])[:40]!r}")
            ts = ts * 10 + (c - 48)
        # coordinates
        a, b = starts[2], ends[2]
        if b == a:
            return self._err("bad lat b''")
        for i in range(a, b):
            if not _numch(s[i]):
                return self._err(f"bad lat {bytes(s[a:b])[:40]!r}")
        lat = strtod(<const char*>(s + a), &endp)
        if <const unsigned char*>endp != s + b:
            return self._err(f"bad lat {bytes(s[a:b])[:40]!r}")
        if not isfinite(lat) or lat < -90.0 or lat > 90.0:
            return self._err(f"lat out of range: {bytes(s[a:b])[:40]!r}")
        a, b = starts[3], ends[3]
        if b == a:
            return self._err("bad lon b''")
        for i in range(a, b):
            if not _numch(s[i]):
                return self._err(f"bad lon {bytes(s[a:b])[:40]!r}")
        lon = strtod(<const char*>(s + a), &endp)
        if <const unsigned char*>endp != s + b:
            return self._err(f"bad lon {bytes(s[a:b])[:40]!r}")
        if not isfinite(lon) or lon < -180.0 or lon > 180.0:
            return self._err(f"lon out of range: {bytes(s[a:b])[:40]!r}")
        # region
        region = -1
        if self.has_region:
            a, b = starts[4], ends[4]
            if b > a:
                if b - a > 18:
                    return self._err(f"bad region_id {bytes(s[a:b])[:40]!r}")
                region = 0
                for i in range(a, b):
                    c = s[i]
                    if c < 48 or c > 57:
                        return self._err(f"bad region_id {bytes(s[a:b])[:40]!r}")
                    region = region * 10 + (c - 48)
        a, b = starts[0], ends[0]
        if b == a:
            return self._err("empty user_id")
        code = self._code_for(s + a, b - a)
        if code < 0:
            return self._err("user_id is not valid UTF-8")
        self._push(code, ts, lat + 0.0, lon + 0.0, region)
        return 0

    cdef int feed(self, bytes data, Py_ssize_t length, bint final) except -1:
        cdef const unsigned char* buf = <const unsigned char*>PyBytes_AS_STRING(data)
        cdef Py_ssize_t pos = 0
        cdef const unsigned char* nl
        while pos < length:
            nl = <const unsigned char*>memchr(buf + pos, 10, length - pos)
            if nl == NULL:
                if final:
                    self.lineno += 1
                    self._line(buf + pos, length - pos)
                break
            self.lineno += 1
            self._line(buf + pos, (nl - buf) - pos)
            pos = (nl - buf) + 1
        return 0

    def result(self):
        n = self.n
        return (
            self.users,
            self.c_a[:n].copy(),
            self.t_a[:n].copy(),
            self.la_a[:n].copy(),
            self.lo_a[:n].copy(),
            self.r_a[:n].copy(),
            self.total,
            self.errors,
        )


def parse_csv_body(f, bint has_region, int64_t first_lineno, on_error, ts_parser=None,
                   Py_ssize_t chunk_size=1 << 22):
    if ts_parser is not None and ts_parser is not parse_unix_ts:
        from mobitrail import _fallback
        return _fallback.parse_csv_body(f, has_region, first_lineno, on_error, ts_parser, chunk_size)
    cdef _CsvState st = _CsvState(has_region, first_lineno - 1, on_error)
    cdef bytes carry = b""
    cdef bytes data
    cdef Py_ssize_t cut
    while True:
        block = f.read(chunk_size)
        if not block:
            break
        data = carry + block if carry else bytes(block)
        cut = data.rfind(b"\n")
        if cut < 0:
            carry = data
            continue
        st.feed(data, cut + 1, False)
        carry = data[cut + 1:]
    if carry:
        st.feed(carry, len(carry), True)
    return st.result()


# ---------------------------------------------------------------- CSV writer

cdef extern from "Python.h":
    char* PyOS_double_to_string(double val, char format_code, int precision, int flags, int* ptype) except NULL
    void PyMem_Free(void* p)
    int Py_DTSF_ADD_DOT_0


cdef inline Py_ssize_t _put_int(char* out, int64_t v) noexcept nogil:
    cdef char tmp[24]
    cdef Py_ssize_t n = 0, k
    cdef bint neg = v < 0
    cdef uint64_t u
    if neg:
        u = <uint64_t>(-(v + 1)) + 1
    else:
        u = <uint64_t>v
    if u == 0:
        tmp[0] = 48
        n = 1
    while u > 0:
        tmp[n] = <char>(48 + u % 10)
        u = u // 10
        n += 1
    k = 0
    if neg:
        out[0] = 45
        k = 1
    while n > 0:
        n -= 1
        out[k] = tmp[n]
        k += 1
    return k



cdef inline Py_ssize_t _put_double(char* out, double v) except -1:
    cdef char* s = PyOS_double_to_string(v, b'r', 0, Py_DTSF_ADD_DOT_0, NULL)
    cdef Py_ssize_t k = 0
    while s[k] != 0:
        out[k] = s[k]
        k += 1
    PyMem_Free(s)
    return k


def format_events_csv(const unsigned char[::1] user_blob, const int64_t[::1] user_offsets,
                      const int32_t[::1] codes, const int64_t[::1] ts, const double[::1] lat,
                      const double[::1] lon, const int64_t[::1] region):
    cdef Py_ssize_t n = codes.shape[0], i, pos = 0, ulen, maxu = 0, u
    cdef int32_t c
    for u in range(user_offsets.shape[0] - 1):
        ulen = user_offsets[u + 1] - user_offsets[u]
        if ulen > maxu:
            maxu = ulen
    if n == 0:
        return b""
    cdef Py_ssize_t cap = n * (maxu + 112)
    cdef char* buf = <char*>malloc(cap)
    if buf == NULL:
        raise MemoryError()
    cdef const unsigned char* blob = &user_blob[0] if user_blob.shape[0] > 0 else NULL
    try:
        for i in range(n):
            c = codes[i]
            ulen = user_offsets[c + 1] - user_offsets[c]
            if ulen:
                memcpy(buf + pos, blob + user_offsets[c], ulen)
            pos += ulen
            buf[pos] = 44
            pos += 1
            pos += _put_int(buf + pos, ts[i])
            buf[pos] = 44
            pos += 1
            pos += _put_double(buf + pos, lat[i])
            buf[pos] = 44
            pos += 1
            pos += _put_double(buf + pos, lon[i])
            buf[pos] = 44
            pos += 1
            if region[i] >= 0:
                pos += _put_int(buf + pos, region[i])
            buf[pos] = 10
            pos += 1
        return PyBytes_FromStringAndSize(buf, pos)
    finally:
        free(buf)
