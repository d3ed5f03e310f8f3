// jacobi1d: tiles 64, intra-tile order (i), port width 8
// DDR rows are padded to a multiple of PW elements.
#include <math.h>
#include <stddef.h>
#include <string.h>

#define PW 8
#define ROUNDUP(x) ((((x) + PW - 1) / PW) * PW)
#define min(a, b) ((a) < (b) ? (a) : (b))
#define max(a, b) ((a) > (b) ? (a) : (b))
#define EMOD(a, b) ((((a) % (b)) + (b)) % (b))

/* memcpy-style burst over a PW-element wide port */
static inline void burstcpy_float(float *dst, const float *src, int n) { memcpy(dst, src, (size_t)n * sizeof(float)); }

/* DDR row elements [c0, c0 + len), clipped to the row, into buf[0 .. len) */
static inline void fill_float(float *buf, const float *row, int c0, int len, int pitch) {
  int lo = max(c0, 0), hi = min(c0 + len, pitch);
  if (lo < hi)
    burstcpy_float(buf + (lo - c0), row + lo, hi - lo);
}

/* write-enabled part of buf[0 .. len) back to the DDR row */
static inline void flush_float(float *row, const float *buf, int c0, int len, int pitch, int lo, int hi, int at, int step) {
  for (int y = max(c0, 0); y < min(c0 + len, pitch); y++)
    if (y >= lo && y <= hi && EMOD(y - at, step) == 0)
      row[y] = buf[y - c0];
}

/* on-chip move between buffer slots */
static inline void shift_float(float *dst, const float *src, int n) {
  for (int k = 0; k < n; k++)
    dst[k] = src[k];
}

void jacobi1d(int N, float A[ROUNDUP(N)], float B[ROUNDUP(N)])
{
  for (int ti = 1; ti <= N - 2; ti += 64) {
    static float A_buf[72];
#pragma HLS ARRAY_PARTITION variable=A_buf complete
    static float B_buf[72];
#pragma HLS ARRAY_PARTITION variable=B_buf complete
    // fill A_buf
    fill_float(&A_buf[0], A, ti - 1, 72, ROUNDUP(N));
    // padded loop: iterations past -ti + N - 2 are neutralized
    for (int i = 0; i <= 63; i++) {
#pragma HLS PIPELINE II=1
      B_buf[i + 1] = (0.33333f * ((A_buf[i] + A_buf[i + 1]) + A_buf[i + 2]));
    }
    // flush B_buf
    flush_float(B, &B_buf[0], ti - 1, 72, ROUNDUP(N), ti, min(ti + 63, N - 2), ti, 1);
  }
}
