/* Native hot path for blockprof.
 *
 * Per-entry logging must cost well under a microsecond, which rules out
 * doing the work in bytecode.  This module provides three small objects:
 *
 *   EntryBlock         fixed-capacity store of (timestamp_ns, tag) pairs
 *   ChannelAppender    appends into a current block; swap is GIL-atomic
 *   DirectRecordWriter writes one 12-byte record per call to an fd
 *
 * ChannelAppender.log never yields the GIL, so an append is atomic with
 * respect to other Python threads; block swapping is coordinated by a
 * Python-level lock in blockprof.handlers.  Timestamps come from
 * CLOCK_MONOTONIC, the same source as time.monotonic_ns().
 */

#define PY_SSIZE_T_CLEAN
#include <Python.h>
#include <structmember.h>

#include <stdint.h>
#include <string.h>
#include <time.h>
#include <unistd.h>

static inline uint64_t
mono_ns(void)
{
    struct timespec t;
    clock_gettime(CLOCK_MONOTONIC, &t);
    return (uint64_t)t.tv_sec * 1000000000ull + (uint64_t)t.tv_nsec;
}

/* 12-byte little-endian record: u64 timestamp_ns, i32 tag. */
static inline void
put_record(unsigned char *p, uint64_t t, uint32_t g)
{
    p[0] = (unsigned char)t;
    p[1] = (unsigned char)(t >> 8);
    p[2] = (unsigned char)(t >> 16);
    p[3] = (unsigned char)(t >> 24);
    p[4] = (unsigned char)(t >> 32);
    p[5] = (unsigned char)(t >> 40);
    p[6] = (unsigned char)(t >> 48);
    p[7] = (unsigned char)(t >> 56);
    p[8] = (unsigned char)g;
    p[9] = (unsigned char)(g >> 8);
    p[10] = (unsigned char)(g >> 16);
    p[11] = (unsigned char)(g >> 24);
}

static int
tag_from_pyobject(PyObject *arg, int32_t *out)
{
    long v = PyLong_AsLong(arg);
    if (v == -1 && PyErr_Occurred())
        return -1;
    if (v < INT32_MIN || v > INT32_MAX) {
        PyErr_SetString(PyExc_OverflowError, "tag out of signed 32-bit range");
        return -1;
    }
    *out = (int32_t)v;
    return 0;
}

/* ------------------------------------------------------------------ */
/* EntryBlock                                                          */
/* ------------------------------------------------------------------ */

typedef struct {
    PyObject_HEAD
    uint64_t *ts;
    int32_t *tags;
    Py_ssize_t capacity;
    Py_ssize_t count;
} BlockObject;

static PyTypeObject BlockType;

static PyObject *
Block_new(PyTypeObject *type, PyObject *args, PyObject *kwds)
{
    Py_ssize_t cap;
    static char *kwlist[] = {"capacity", NULL};

    if (!PyArg_ParseTupleAndKeywords(args, kwds, "n", kwlist, &cap))
        return NULL;
    if (cap < 1) {
        PyErr_SetString(PyExc_ValueError, "capacity must be >= 1");
        return NULL;
    }
    BlockObject *self = (BlockObject *)type->tp_alloc(type, 0);
    if (!self)
        return NULL;
    self->ts = PyMem_Malloc((size_t)cap * sizeof(uint64_t));
    self->tags = PyMem_Malloc((size_t)cap * sizeof(int32_t));
    if (!self->ts || !self->tags) {
        Py_DECREF(self);
        return PyErr_NoMemory();
    }
    self->capacity = cap;
    self->count = 0;
    return (PyObject *)self;
}

static void
Block_dealloc(BlockObject *self)
{
    PyMem_Free(self->ts);
    PyMem_Free(self->tags);
    Py_TYPE(self)->tp_free((PyObject *)self);
}

static PyObject *
Block_reset(BlockObject *self, PyObject *Py_UNUSED(ignored))
{
    self->count = 0;
    Py_RETURN_NONE;
}

static PyObject *
Block_encode(BlockObject *self, PyObject *Py_UNUSED(ignored))
{
    Py_ssize_t n = self->count;
    PyObject *out = PyBytes_FromStringAndSize(NULL, n * 12);
    if (!out)
        return NULL;
    unsigned char *p = (unsigned char *)PyBytes_AS_STRING(out);
    uint64_t *ts = self->ts;
    int32_t *tags = self->tags;
    Py_BEGIN_ALLOW_THREADS
    for (Py_ssize_t i = 0; i < n; i++) {
        put_record(p, ts[i], (uint32_t)tags[i]);
        p += 12;
    }
    Py_END_ALLOW_THREADS
    return out;
}

PyDoc_STRVAR(block_doc,
             "EntryBlock(capacity)\n\n"
             "Fixed-capacity in-memory store of (timestamp_ns, tag) entries.\n"
             "Filled through a ChannelAppender, drained with encode(), and\n"
             "recycled with reset().");

static PyMethodDef Block_methods[] = {
    {"reset", (PyCFunction)Block_reset, METH_NOARGS,
     "Discard all entries so the block can be reused."},
    {"encode", (PyCFunction)Block_encode, METH_NOARGS,
     "Return the first `count` entries as consecutive 12-byte records."},
    {NULL},
};

static PyMemberDef Block_members[] = {
    {"capacity", T_PYSSIZET, offsetof(BlockObject, capacity), READONLY,
     "Maximum number of entries."},
    {"count", T_PYSSIZET, offsetof(BlockObject, count), READONLY,
     "Number of entries currently stored."},
    {NULL},
};

static PyTypeObject BlockType = {
    PyVarObject_HEAD_INIT(NULL, 0)
    .tp_name = "blockprof._native.EntryBlock",
    .tp_doc = block_doc,
    .tp_basicsize = sizeof(BlockObject),
    .tp_flags = Py_TPFLAGS_DEFAULT,
    .tp_new = Block_new,
    .tp_dealloc = (destructor)Block_dealloc,
    .tp_methods = Block_methods,
    .tp_members = Block_members,
};

/* ------------------------------------------------------------------ */
/* ChannelAppender                                                     */
/* ------------------------------------------------------------------ */

typedef struct {
    PyObject_HEAD
    BlockObject *current; /* strong reference or NULL */
} AppenderObject;

static PyObject *
Appender_new(PyTypeObject *type, PyObject *args, PyObject *kwds)
{
    AppenderObject *self = (AppenderObject *)type->tp_alloc(type, 0);
    if (!self)
        return NULL;
    self->current = NULL;
    return (PyObject *)self;
}

static void
Appender_dealloc(AppenderObject *self)
{
    Py_XDECREF(self->current);
    Py_TYPE(self)->tp_free((PyObject *)self);
}

static PyObject *
Appender_set_block(AppenderObject *self, PyObject *arg)
{
    if (arg == Py_None) {
        Py_CLEAR(self->current);
        Py_RETURN_NONE;
    }
    if (!PyObject_TypeCheck(arg, &BlockType)) {
        PyErr_SetString(PyExc_TypeError, "expected EntryBlock or None");
        return NULL;
    }
    Py_INCREF(arg);
    Py_XSETREF(self->current, (BlockObject *)arg);
    Py_RETURN_NONE;
}

static PyObject *
Appender_get_block(AppenderObject *self, PyObject *Py_UNUSED(ignored))
{
    if (!self->current)
        Py_RETURN_NONE;
    Py_INCREF(self->current);
    return (PyObject *)self->current;
}

/* Returns 1 = appended; 0 = appended and the block is now full;
 * -1 = not appended (no block installed, or block already full). */
static PyObject *
Appender_log(AppenderObject *self, PyObject *arg)
{
    int32_t tag;
    if (tag_from_pyobject(arg, &tag) < 0)
        return NULL;
    BlockObject *b = self->current;
    if (!b || b->count >= b->capacity)
        return PyLong_FromLong(-1);
    Py_ssize_t i = b->count;
    b->ts[i] = mono_ns();
    b->tags[i] = tag;
    b->count = i + 1;
    return PyLong_FromLong(b->count < b->capacity ? 1 : 0);
}

PyDoc_STRVAR(appender_doc,
             "ChannelAppender()\n\n"
             "Per-channel append cursor.  log(tag) stores a monotonic\n"
             "timestamp and the tag into the installed block without\n"
             "releasing the GIL, making each append atomic against other\n"
             "Python threads.  Return codes: 1 appended, 0 appended and\n"
             "the block is now full, -1 nothing appended (full or no\n"
             "block); callers handle 0/-1 on their slow path.");

static PyMethodDef Appender_methods[] = {
    {"set_block", (PyCFunction)Appender_set_block, METH_O,
     "Install the block to fill (or None to detach)."},
    {"block", (PyCFunction)Appender_get_block, METH_NOARGS,
     "Return the currently installed block, or None."},
    {"log", (PyCFunction)Appender_log, METH_O,
     "Append one timestamped tag; returns 1, 0 (now full) or -1."},
    {NULL},
};

static PyTypeObject AppenderType = {
    PyVarObject_HEAD_INIT(NULL, 0)
    .tp_name = "blockprof._native.ChannelAppender",
    .tp_doc = appender_doc,
    .tp_basicsize = sizeof(AppenderObject),
    .tp_flags = Py_TPFLAGS_DEFAULT,
    .tp_new = Appender_new,
    .tp_dealloc = (destructor)Appender_dealloc,
    .tp_methods = Appender_methods,
};

/* ------------------------------------------------------------------ */
/* DirectRecordWriter                                                  */
/* ------------------------------------------------------------------ */

typedef struct {
    PyObject_HEAD
    int fd;
    unsigned long long writes;
    unsigned long long errors;
} DirectWriterObject;

static PyObject *
DirectWriter_new(PyTypeObject *type, PyObject *args, PyObject *kwds)
{
    int fd;
    static char *kwlist[] = {"fd", NULL};

    if (!PyArg_ParseTupleAndKeywords(args, kwds, "i", kwlist, &fd))
        return NULL;
    DirectWriterObject *self = (DirectWriterObject *)type->tp_alloc(type, 0);
    if (!self)
        return NULL;
    self->fd = fd;
    self->writes = 0;
    self->errors = 0;
    return (PyObject *)self;
}

/* One record, one write(2).  Failed writes are counted and dropped so
 * the caller's hot path never raises. */
static PyObject *
DirectWriter_log(DirectWriterObject *self, PyObject *arg)
{
    int32_t tag;
    if (tag_from_pyobject(arg, &tag) < 0)
        return NULL;
    unsigned char rec[12];
    put_record(rec, mono_ns(), (uint32_t)tag);
    if (write(self->fd, rec, 12) == 12)
        self->writes++;
    else
        self->errors++;
    Py_RETURN_NONE;
}

static PyObject *
DirectWriter_detach(DirectWriterObject *self, PyObject *Py_UNUSED(ignored))
{
    self->fd = -1;
    Py_RETURN_NONE;
}

PyDoc_STRVAR(directwriter_doc,
             "DirectRecordWriter(fd)\n\n"
             "Writes one 12-byte record per log(tag) call straight to the\n"
             "file descriptor, which is the per-entry disk I/O strategy.\n"
             "The fd stays owned by the caller; detach() before closing it.");

static PyMethodDef DirectWriter_methods[] = {
    {"log", (PyCFunction)DirectWriter_log, METH_O,
     "Write one timestamped record to the fd."},
    {"detach", (PyCFunction)DirectWriter_detach, METH_NOARGS,
     "Forget the fd; subsequent log calls count as errors."},
    {NULL},
};

static PyMemberDef DirectWriter_members[] = {
    {"writes", T_ULONGLONG, offsetof(DirectWriterObject, writes), READONLY,
     "Number of successful record writes."},
    {"errors", T_ULONGLONG, offsetof(DirectWriterObject, errors), READONLY,
     "Number of failed record writes (records dropped)."},
    {NULL},
};

static PyTypeObject DirectWriterType = {
    PyVarObject_HEAD_INIT(NULL, 0)
    .tp_name = "blockprof._native.DirectRecordWriter",
    .tp_doc = directwriter_doc,
    .tp_basicsize = sizeof(DirectWriterObject),
    .tp_flags = Py_TPFLAGS_DEFAULT,
    .tp_new = DirectWriter_new,
    .tp_dealloc = (destructor)PyObject_Del,
    .tp_methods = DirectWriter_methods,
    .tp_members = DirectWriter_members,
};

/* ------------------------------------------------------------------ */

static struct PyModuleDef nativemodule = {
    PyModuleDef_HEAD_INIT,
    .m_name = "blockprof._native",
    .m_doc = "Native per-entry logging primitives.",
    .m_size = -1,
};

PyMODINIT_FUNC
PyInit__native(void)
{
    PyObject *m;

    if (PyType_Ready(&BlockType) < 0)
        return NULL;
    if (PyType_Ready(&AppenderType) < 0)
        return NULL;
    if (PyType_Ready(&DirectWriterType) < 0)
        return NULL;

    m = PyModule_Create(&nativemodule);
    if (!m)
        return NULL;

    Py_INCREF(&BlockType);
    if (PyModule_AddObject(m, "EntryBlock", (PyObject *)&BlockType) < 0) {
        Py_DECREF(&BlockType);
        Py_DECREF(m);
        return NULL;
    }
    Py_INCREF(&AppenderType);
    if (PyModule_AddObject(m, "ChannelAppender", (PyObject *)&AppenderType) < 0) {
        Py_DECREF(&AppenderType);
        Py_DECREF(m);
        return NULL;
    }
    Py_INCREF(&DirectWriterType);
    if (PyModule_AddObject(m, "DirectRecordWriter", (PyObject *)&DirectWriterType) < 0) {
        Py_DECREF(&DirectWriterType);
        Py_DECREF(m);
        return NULL;
    }
    return m;
}
