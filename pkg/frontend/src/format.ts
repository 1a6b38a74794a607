// Display formatting only: the console never computes on effect sizes.

export function display4(x: number): string {
  return x.toFixed(4);
}

export function fullPrecision(x: number): string {
  return String(x);
}

export function ciRange(lower: number, upper: number): string {
  return "[" + display4(lower) + ", " + display4(upper) + "]";
}
