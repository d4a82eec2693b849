/** Dense linear algebra for small symmetric positive-definite systems. */

export function zeros(n: number): number[] {
  return new Array(n).fill(0);
}

export function matZeros(n: number): number[][] {
  return Array.from({ length: n }, () => zeros(n));
}

/** In-place rank-1 update: A += scale * v v^T. */
export function rankOneUpdate(a: number[][], v: number[], scale = 1): void {
  const n = v.length;
  for (let i = 0; i < n; i++) {
    for (let j = 0; j < n; j++) {
      a[i][j] += scale * v[i] * v[j];
    }
  }
}

/** Cholesky factorization A = L L^T; throws if not positive definite. */
export function cholesky(a: number[][]): number[][] {
  const n = a.length;
  const l = matZeros(n);
  for (let i = 0; i < n; i++) {
    for (let j = 0; j <= i; j++) {
      let sum = a[i][j];
      for (let k = 0; k < j; k++) sum -= l[i][k] * l[j][k];
      if (i === j) {
        if (sum <= 0) throw new Error(`matrix not positive definite at pivot ${i}`);
        l[i][i] = Math.sqrt(sum);
      } else {
        l[i][j] = sum / l[j][j];
      }
    }
  }
  return l;
}

/** Solve A x = b given the Cholesky factor of A. */
export function choleskySolve(l: number[][], b: number[]): number[] {
  const n = b.length;
  const y = zeros(n);
  for (let i = 0; i < n; i++) {
    let sum = b[i];
    for (let k = 0; k < i; k++) sum -= l[i][k] * y[k];
    y[i] = sum / l[i][i];
  }
  const x = zeros(n);
  for (let i = n - 1; i >= 0; i--) {
    let sum = y[i];
    for (let k = i + 1; k < n; k++) sum -= l[k][i] * x[k];
    x[i] = sum / l[i][i];
  }
  return x;
}

export function dot(a: number[], b: number[]): number {
  let s = 0;
  for (let i = 0; i < a.length; i++) s += a[i] * b[i];
  return s;
}

/** Standard normal CDF via the Abramowitz-Stegun erf expansion (~1e-7). */
export function normalCdf(z: number): number {
  if (z > 12) return 1;
  if (z < -12) return 0;
  const t = 1 / (1 + 0.2316419 * Math.abs(z));
  const poly =
    t *
    (0.319381530 +
      t * (-0.356563782 + t * (1.781477937 + t * (-1.821255978 + t * 1.330274429))));
  const tail = Math.exp(-0.5 * z * z) * poly * 0.3989422804014327;
  return z >= 0 ? 1 - tail : tail;
}

export function sigmoid(z: number): number {
  if (z >= 0) return 1 / (1 + Math.exp(-z));
  const e = Math.exp(z);
  return e / (1 + e);
}
