/** Display formatting. Raw payload values are always kept alongside
 * the rounded text (in data attributes) so nothing on screen is ever
 * more than a formatting step away from a server field. */

export function pct(value: number): string {
  return `${(value * 100).toFixed(1)}%`;
}

export function fixed(value: number, digits = 3): string {
  return value.toFixed(digits);
}

/** Exact decimal/JSON text of a payload number for data attributes. */
export function exact(value: number): string {
  return String(value);
}

export function eventTime(ts: number): string {
  return new Date(ts * 1000).toISOString();
}
