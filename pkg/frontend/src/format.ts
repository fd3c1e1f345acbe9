/** Presentation helpers shared by the views. */

import type { SectionSummary } from "./api.js";

/** "EXPIRED" once past the deadline, otherwise a humane countdown. */
export function ttlLabel(section: Pick<SectionSummary, "expired" | "minutes_remaining">): string {
  if (section.expired) return "EXPIRED";
  const minutes = section.minutes_remaining;
  if (minutes >= 2880) return `${(minutes / 1440).toFixed(1)}d left`;
  if (minutes >= 120) return `${(minutes / 60).toFixed(1)}h left`;
  if (minutes >= 1) return `${minutes.toFixed(1)}m left`;
  return `${Math.max(0, Math.round(minutes * 60))}s left`;
}

export function timestamp(iso: string): string {
  return iso.replace("T", " ").slice(0, 19);
}

export function percent(fraction: number): string {
  return `${(fraction * 100).toFixed(1)}%`;
}
