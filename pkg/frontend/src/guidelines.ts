// Annotation guidance shown in the collapsible panel next to the task view.

export interface GuidelineSection {
  heading: string;
  points: string[];
}

export const GUIDELINE_SECTIONS: GuidelineSection[] = [
  {
    heading: 'Dimension 1: LR-HR Semantic Consistency',
    points: [
      'Check whether the restoration stays faithful to the low-resolution input: no fabricated objects, no erased structures.',
      'Watch for identity shifts, such as a blurry animal contour reconstructed as a different animal, or unreadable text turned into random patterns.',
      'Watch for material or logic swaps, such as a brick wall rendered as smooth concrete or a wooden fence turned into metal railings.',
      'The more faithful the details are to the structure and cues of the input, the better the candidate ranks on this dimension.',
    ],
  },
  {
    heading: 'Dimension 2: Semantic Plausibility',
    points: [
      'Check whether the result looks like a real high-definition photograph, globally and locally.',
      'Look for generative artifacts: twisted window shapes, distorted faces, collapsed edges, irregular line jitter.',
      'Look for global violations: scenes that break physical common sense or dissolve into textureless color blocks.',
      'The more natural and distortion-free the image, the better the candidate ranks on this dimension.',
    ],
  },
  {
    heading: 'Holistic Preference Ranking',
    points: [
      'Weigh both dimensions and rank from 1 (best) to 4 (worst) by overall visual preference, not a fixed formula.',
      'Prefer a strict ordering. Assign the same badge to several candidates only when they are so close that you cannot reliably tell them apart; tied candidates share a mid-rank automatically.',
    ],
  },
];
