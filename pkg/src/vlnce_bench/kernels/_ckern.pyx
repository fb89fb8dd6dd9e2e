# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels, bit-identical to vlnce_bench.kernels._pykern.

Keep the floating-point operation order in lockstep with the pure backend:
distances accumulate in cell units, neighbor relaxation follows the same
lexicographic order, and the build disables FMA contraction.
"""

from libc.math cimport floor, sqrt, INFINITY
from libc.stdlib cimport free, malloc, realloc

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "cython"

cdef double _SQRT2 = sqrt(2.0)

cdef int[8] _DR = [-1, -1, -1, 0, 0, 1, 1, 1]
cdef int[8] _DC = [-1, 0, 1, -1, 1, -1, 0, 1]


cdef struct HeapItem:
    double key
    long idx


cdef inline bint _less(HeapItem a, HeapItem b) noexcept:
    if a.key != b.key:
        return a.key < b.key
    return a.idx < b.idx


cdef class _Heap:
    cdef HeapItem* items
    cdef Py_ssize_t size
    cdef Py_ssize_t cap

    def __cinit__(self, Py_ssize_t cap):
        self.items = <HeapItem*> malloc(cap * sizeof(HeapItem))
        if self.items == NULL:
            raise MemoryError()
        self.size = 0
        self.cap = cap

    def __dealloc__(self):
        if self.items != NULL:
            free(self.items)

    cdef int push(self, double key, long idx) except -1:
        cdef Py_ssize_t i, parent
        cdef HeapItem item
        cdef HeapItem* heap
        if self.size >= self.cap:
            self._grow()
        heap = self.items
        item.key = key
        item.idx = idx
        i = self.size
        self.size += 1
        while i > 0:
            parent = (i - 1) >> 1
            if _less(item, heap[parent]):
                heap[i] = heap[parent]
                i = parent
            else:
                break
        heap[i] = item
        return 0

    cdef int _grow(self) except -1:
        cdef Py_ssize_t ncap = self.cap * 2
        cdef HeapItem* p = <HeapItem*> realloc(self.items, ncap * sizeof(HeapItem))
        if p == NULL:
            raise MemoryError()
        self.items = p
        self.cap = ncap
        return 0

    cdef HeapItem pop(self):
        cdef HeapItem* heap = self.items
        cdef HeapItem top = heap[0]
        cdef HeapItem last
        cdef Py_ssize_t i = 0, child
        self.size -= 1
        if self.size > 0:
            last = heap[self.size]
            while True:
                child = 2 * i + 1
                if child >= self.size:
                    break
                if child + 1 < self.size and _less(heap[child + 1], heap[child]):
                    child += 1
                if _less(heap[child], last):
                    heap[i] = heap[child]
                    i = child
                else:
                    break
            heap[i] = last
        return top


def distance_field(object obstacles_arr, int src_r, int src_c):
    cdef const cnp.uint8_t[:, :] obstacles = obstacles_arr
    cdef int h = obstacles.shape[0]
    cdef int w = obstacles.shape[1]
    if src_r < 0 or src_r >= h or src_c < 0 or src_c >= w or obstacles[src_r, src_c]:
        raise ValueError("source cell is blocked or out of bounds")
    cdef cnp.ndarray[cnp.float64_t, ndim=2] dist = np.full((h, w), np.inf, dtype=np.float64)
    cdef cnp.ndarray[cnp.uint8_t, ndim=2] settled = np.zeros((h, w), dtype=np.uint8)
    cdef _Heap heap = _Heap(4 * h * w + 8)
    cdef HeapItem item
    cdef double d, nd
    cdef int r, c, nr, nc, k, dr, dc
    dist[src_r, src_c] = 0.0
    heap.push(0.0, src_r * w + src_c)
    while heap.size > 0:
        item = heap.pop()
        d = item.key
        r = <int>(item.idx // w)
        c = <int>(item.idx % w)
        if settled[r, c]:
            continue
        settled[r, c] = 1
        for k in range(8):
            dr = _DR[k]
            dc = _DC[k]
            nr = r + dr
            nc = c + dc
            if nr < 0 or nr >= h or nc < 0 or nc >= w:
                continue
            if obstacles[nr, nc]:
                continue
            if dr != 0 and dc != 0:
                if obstacles[r + dr, c] or obstacles[r, c + dc]:
                    continue
                nd = d + _SQRT2
            else:
                nd = d + 1.0
            if nd < dist[nr, nc]:
                dist[nr, nc] = nd
                heap.push(nd, nr * w + nc)
    return dist


cdef double _single_ray(const cnp.uint8_t[:, :] obst, double res, double x, double y,
                        double dx, double dy, double max_range) noexcept:
    cdef int h = obst.shape[0]
    cdef int w = obst.shape[1]
    cdef int c = <int>floor(x / res)
    cdef int r = <int>floor(y / res)
    cdef int step_c, step_r
    cdef double t_max_x, t_dx, t_max_y, t_dy, t
    if dx > 0.0:
        step_c = 1
        t_max_x = ((c + 1) * res - x) / dx
        t_dx = res / dx
    elif dx < 0.0:
        step_c = -1
        t_max_x = (c * res - x) / dx
        t_dx = res / -dx
    else:
        step_c = 0
        t_max_x = INFINITY
        t_dx = INFINITY
    if dy > 0.0:
        step_r = 1
        t_max_y = ((r + 1) * res - y) / dy
        t_dy = res / dy
    elif dy < 0.0:
        step_r = -1
        t_max_y = (r * res - y) / dy
        t_dy = res / -dy
    else:
        step_r = 0
        t_max_y = INFINITY
        t_dy = INFINITY
    while True:
        if t_max_x <= t_max_y:
            t = t_max_x
            c += step_c
            t_max_x += t_dx
        else:
            t = t_max_y
            r += step_r
            t_max_y += t_dy
        if t > max_range:
            return max_range
        if r < 0 or r >= h or c < 0 or c >= w:
            return t if t < max_range else max_range
        if obst[r, c]:
            return t if t < max_range else max_range


def ray_first_hits(object obstacles_arr, double resolution,
                   double x, double y, object dirs_arr,
                   double max_range):
    cdef const cnp.float64_t[:, :] dirs = dirs_arr
    cdef Py_ssize_t n = dirs.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef Py_ssize_t j
    cdef const cnp.uint8_t[:, :] obst = obstacles_arr
    for j in range(n):
        out[j] = _single_ray(obst, resolution, x, y, dirs[j, 0], dirs[j, 1], max_range)
    return out


def sweep_forward(object obstacles_arr, double resolution,
                  double x, double y, double dx, double dy, double dist):
    cdef const cnp.uint8_t[:, :] obst = obstacles_arr
    cdef double skin = resolution * 0.5
    cdef double hit = _single_ray(obst, resolution, x, y, dx, dy, dist + skin)
    cdef double moved = hit - skin
    if moved < 0.0:
        moved = 0.0
    if moved >= dist:
        return dist, False
    return moved, True
