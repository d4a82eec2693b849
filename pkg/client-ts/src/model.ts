/**
 * Fitted predictive models behind the protocol: one ridge regression per
 * treatment arm with a Gaussian predictive around the fit, and a logistic
 * treatment model trained by iteratively reweighted least squares.
 *
 * Absorbing one observation updates the ridge sufficient statistics exactly
 * and warm-starts the logistic refit, so sequential conditioning stays cheap.
 */

import {
  cholesky,
  choleskySolve,
  dot,
  matZeros,
  normalCdf,
  rankOneUpdate,
  sigmoid,
  zeros,
} from "./linalg.js";

const RIDGE = 1.0;
const MIN_SIGMA = 1e-3;

function features(x: number[]): number[] {
  return [1, ...x];
}

class RidgeArm {
  private xtx: number[][];
  private xty: number[];
  private yty = 0;
  private count = 0;
  private chol: number[][] | null = null;
  private coef: number[] = [];
  private sigma = 1;

  constructor(private width: number) {
    this.xtx = matZeros(width);
    for (let i = 0; i < width; i++) this.xtx[i][i] = RIDGE;
    this.xty = zeros(width);
  }

  add(f: number[], y: number): void {
    rankOneUpdate(this.xtx, f);
    for (let i = 0; i < this.width; i++) this.xty[i] += f[i] * y;
    this.yty += y * y;
    this.count += 1;
    this.chol = null;
  }

  private refresh(): void {
    if (this.chol !== null) return;
    this.chol = cholesky(this.xtx);
    this.coef = choleskySolve(this.chol, this.xty);
    const rss = Math.max(this.yty - dot(this.coef, this.xty), 0);
    const dof = Math.max(this.count - this.width, 1);
    this.sigma = Math.max(Math.sqrt(rss / dof), MIN_SIGMA);
  }

  predictiveCdf(f: number[], grid: number[]): number[] {
    this.refresh();
    const mean = dot(this.coef, f);
    // predictive spread widens with the coefficient uncertainty at f
    const quad = dot(f, choleskySolve(this.chol as number[][], f));
    const sd = this.sigma * Math.sqrt(1 + quad);
    return grid.map((y) => normalCdf((y - mean) / sd));
  }
}

class LogisticModel {
  private rows: number[][] = [];
  private labels: number[] = [];
  private coef: number[];
  private stale = true;

  constructor(private width: number) {
    this.coef = zeros(width);
  }

  add(f: number[], a: number): void {
    this.rows.push(f);
    this.labels.push(a);
    this.stale = true;
  }

  private refit(): void {
    if (!this.stale) return;
    // a handful of IRLS steps from the previous coefficients
    for (let iter = 0; iter < 8; iter++) {
      const h = matZeros(this.width);
      for (let i = 0; i < this.width; i++) h[i][i] = RIDGE;
      const g = zeros(this.width);
      for (let i = 0; i < this.width; i++) g[i] = -RIDGE * this.coef[i];
      for (let r = 0; r < this.rows.length; r++) {
        const f = this.rows[r];
        const p = sigmoid(dot(this.coef, f));
        const w = Math.max(p * (1 - p), 1e-6);
        rankOneUpdate(h, f, w);
        const resid = this.labels[r] - p;
        for (let i = 0; i < this.width; i++) g[i] += resid * f[i];
      }
      const step = choleskySolve(cholesky(h), g);
      let move = 0;
      for (let i = 0; i < this.width; i++) {
        this.coef[i] += step[i];
        move += Math.abs(step[i]);
      }
      if (move < 1e-10) break;
    }
    this.stale = false;
  }

  prob(f: number[]): number {
    this.refit();
    const p = sigmoid(dot(this.coef, f));
    return Math.min(Math.max(p, 1e-6), 1 - 1e-6);
  }
}

export class FittedModels {
  private arms: [RidgeArm, RidgeArm];
  private treatment: LogisticModel;

  constructor(rows: number[][]) {
    if (rows.length === 0) throw new Error("fit requires at least one row");
    const dim = rows[0].length - 2;
    if (dim < 1) throw new Error("rows must carry covariates, treatment, outcome");
    const width = dim + 1;
    this.arms = [new RidgeArm(width), new RidgeArm(width)];
    this.treatment = new LogisticModel(width);
    for (const row of rows) {
      if (row.length !== dim + 2) throw new Error("ragged fit rows");
      const x = row.slice(0, dim);
      const a = row[dim];
      const y = row[dim + 1];
      if (a !== 0 && a !== 1) throw new Error(`treatment must be 0/1, got ${a}`);
      this.absorb(x, a, y);
    }
  }

  absorb(x: number[], a: number, y: number | null): void {
    const f = features(x);
    if (y !== null) this.arms[a].add(f, y);
    this.treatment.add(f, a);
  }

  cdf(x: number[], a: number, grid: number[]): number[] {
    return this.arms[a].predictiveCdf(features(x), grid);
  }

  prob(x: number[]): number {
    return this.treatment.prob(features(x));
  }
}
